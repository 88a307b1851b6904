import pytest

from actionlm.pipeline.config import RunConfig

# Small enough that a full two-stage run takes about a second.
SMOKE = dict(
    synth_classes=4, synth_joints=4, synth_frames=16, synth_samples_per_class=6, synth_noise=0.05,
    d_u=16, hidden=16, codebook_size=8, batch_size=4,
    codec_iterations=3, lora_iterations=3, lora_batch_size=4, lora_rank=2,
    lm_layers=1, lm_heads=2, lm_ff=32, lm_pretrain_steps=5, lm_batch_size=8, lm_corpus_sentences=120,
    log_every=1,
)


@pytest.fixture(scope="session")
def smoke_config() -> RunConfig:
    return RunConfig(**SMOKE)


# Acceptance verdicts, printed as one line each at the end of the run.
VERDICTS: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS, key=lambda k: (int(k.rstrip("abc")), k)):
        terminalreporter.write_line(VERDICTS[key])
