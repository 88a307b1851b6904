import numpy as np
import pytest

from actionlm.diffcore import AdamW, ContractViolation, Tensor, backward, grad_check, make_rng
from actionlm.diffcore.nn import Linear
from actionlm.recognizer import (ACTION_NAMES, EOS, PAD, ConfigurationError, LMConfig, LoRALinear,
                                 adapter_parameters, attach_lora, build_corpus, build_instruction, lora_loss,
                                 predict, pretrain_base, teacher_batch, token_cross_entropy, tokenize_words,
                                 verify_base_frozen)
from actionlm.recognizer.corpus import build_vocabulary, format_class_list, template_pieces

TINY = LMConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32, max_len=64)
SLOT = 4
NAMES = ACTION_NAMES[:4]


@pytest.fixture(scope="module")
def pretrained():
    rng = make_rng(0, "tiny-lm")
    corpus = build_corpus(rng, names=NAMES, sentences=300, slot_length=SLOT)
    model, report = pretrain_base(corpus, TINY, rng, class_names=NAMES, steps=60, batch_size=16)
    return model, report


@pytest.fixture()
def lm(pretrained):
    return pretrained[0]


def vectors(n, seed=0):
    return make_rng(seed, "vec").normal(size=(n, SLOT, TINY.d_model))


class TestCorpus:
    def test_sentences_end_with_eos(self):
        corpus = build_corpus(make_rng(1), names=NAMES, sentences=50, slot_length=SLOT)
        assert all(s[-1] == EOS for s in corpus)

    def test_vocabulary_covers_names_and_templates(self, lm):
        for name in NAMES:
            assert all(w in lm.index for w in tokenize_words(name))
        assert lm.vocab[:2] == [PAD, EOS]

    def test_vocabulary_is_sorted_after_specials(self):
        vocab = build_vocabulary([["b", "a", EOS], ["c", EOS]])
        assert vocab == [PAD, EOS, "a", "b", "c"]

    def test_tokenizer(self):
        assert tokenize_words("Drink water, please.") == ["drink", "water", ",", "please", "."]

    def test_template_pieces(self):
        head, mid, tail = template_pieces("a [tokens] b c [list] d")
        assert (head, mid, tail) == (["a"], ["b", "c"], ["d"])
        assert template_pieces("x [tokens] y")[2] is None

    def test_class_list_format(self):
        assert format_class_list(["wave hand", "jump up"]) == ["wave", "hand", ",", "jump", "up"]


class TestPretraining:
    def test_beats_uniform_baseline(self, pretrained):
        _, report = pretrained
        assert report.heldout_loss < report.uniform_baseline

    def test_missing_class_name(self):
        corpus = build_corpus(make_rng(1), names=NAMES, sentences=20, slot_length=SLOT)
        with pytest.raises(ConfigurationError):
            pretrain_base(corpus, TINY, make_rng(1), class_names=["moonwalk backwards"], steps=1)

    def test_sequence_limit(self, lm):
        with pytest.raises(ContractViolation):
            lm.forward_embeddings(Tensor(np.zeros((1, TINY.max_len + 1, TINY.d_model))))

    def test_out_of_vocab_target(self):
        with pytest.raises(ConfigurationError):
            token_cross_entropy(Tensor(np.zeros((1, 2, 5))), np.array([[0, 7]]), np.ones((1, 2)))


class TestLoRA:
    def test_rank_bounds(self):
        base = Linear(8, 4, make_rng(0))
        with pytest.raises(ContractViolation):
            LoRALinear(base, 0, 16.0, make_rng(0))
        with pytest.raises(ContractViolation):
            LoRALinear(base, 5, 16.0, make_rng(0))

    def test_zero_init_logits_bit_exact(self, lm):
        adapted = attach_lora(lm, 4, 16.0, make_rng(2))
        ids = make_rng(3).integers(2, lm.vocab_size, size=(3, 12))
        assert adapted(ids).data.tobytes() == lm(ids).data.tobytes()

    def test_only_adapters_trainable(self, lm):
        adapted = attach_lora(lm, 4, 16.0, make_rng(2))
        trainable = {id(p) for p in adapted.trainable_parameters()}
        assert trainable == {id(p) for _, p in adapter_parameters(adapted)}
        assert len(trainable) == 2 * 2 * TINY.n_layers
        # the source model is not modified
        assert all(p.requires_grad for p in lm.parameters())

    def test_all_tuning_unfreezes(self, lm):
        adapted = attach_lora(lm, 4, 16.0, make_rng(2), all_tuning=True)
        assert all(p.requires_grad for p in adapted.parameters())

    def test_verify_base_frozen(self, lm):
        reference = lm.state_dict()
        adapted = attach_lora(lm, 4, 16.0, make_rng(2))
        assert verify_base_frozen(adapted, reference)
        adapted.blocks[0].attn.q.lora_b.data = adapted.blocks[0].attn.q.lora_b.data + 1.0
        assert verify_base_frozen(adapted, reference)
        w = adapted.blocks[1].ff_in.weight
        w.data = w.data.copy()
        w.data.flat[0] = np.nextafter(w.data.flat[0], np.inf)
        assert not verify_base_frozen(adapted, reference)

    def test_adapter_training_keeps_base(self, lm):
        reference = lm.state_dict()
        adapted = attach_lora(lm, 2, 16.0, make_rng(2))
        opt = AdamW(adapted.trainable_parameters(), lr=1e-2)
        ins = [build_instruction(v, adapted) for v in vectors(4)]
        tb = teacher_batch(adapted, ins, NAMES)
        first = None
        for _ in range(10):
            loss = lora_loss(adapted.forward_embeddings(tb.embeddings), tb.targets, tb.mask)
            first = loss.item() if first is None else first
            opt.zero_grad()
            backward(loss)
            opt.step()
        assert loss.item() < first
        assert verify_base_frozen(adapted, reference)


class TestInstructions:
    def test_width_mismatch(self, lm):
        with pytest.raises(ContractViolation):
            build_instruction(np.zeros((SLOT, TINY.d_model + 1)), lm)

    def test_list_template(self, lm):
        ins = build_instruction(vectors(1)[0], lm, class_list=NAMES[:3])
        words = [lm.vocab[i] for i in ins.suffix_ids]
        for name in NAMES[:3]:
            assert tokenize_words(name)[0] in words
        assert ins.length == len(ins.prefix_ids) + SLOT + len(ins.suffix_ids)

    def test_mask_covers_answer_and_eos_only(self, lm):
        ins = [build_instruction(v, lm) for v in vectors(2)]
        tb = teacher_batch(lm, ins, [NAMES[0], NAMES[1]])
        for row, name in enumerate(NAMES[:2]):
            expected = lm.ids(tokenize_words(name) + [EOS])
            assert list(tb.targets[row][tb.mask[row] == 1]) == expected

    def test_loss_ignores_instruction_positions(self, lm):
        ins = [build_instruction(v, lm) for v in vectors(2)]
        tb = teacher_batch(lm, ins, NAMES[:2])
        logits = lm.forward_embeddings(tb.embeddings).data
        noisy = logits + (1 - tb.mask)[..., None] * make_rng(4).normal(size=logits.shape) * 10
        assert lora_loss(Tensor(logits), tb.targets, tb.mask).item() == lora_loss(Tensor(noisy), tb.targets, tb.mask).item()

    def test_loss_gradient(self):
        rng = np.random.default_rng(7)
        targets = rng.integers(0, 6, size=(2, 5))
        mask = (rng.uniform(size=(2, 5)) > 0.4).astype(float)
        mask[0, 0] = 1.0
        for _ in range(100):
            assert grad_check(lambda t: lora_loss(t, targets, mask), rng.normal(size=(2, 5, 6))) < 1e-4

    def test_predict_is_order_invariant(self, lm):
        ins = [build_instruction(v, lm) for v in vectors(5, seed=9)]
        ins.append(build_instruction(vectors(1, seed=10)[0], lm, class_list=NAMES[:3]))
        forward = predict(lm, ins)
        backward_order = predict(lm, ins[::-1])
        assert forward == backward_order[::-1]
        assert all(isinstance(p, str) for p in forward)
