"""Word-level toy corpus the stand-in language model is pre-trained on.

Besides descriptive sentences about actions it contains instruction-shaped
examples (random words in the token slot, an action name as the answer) so
the frozen model already knows the answer format before adaptation.
"""

from __future__ import annotations

import re

import numpy as np

PAD = "<pad>"
EOS = "<eos>"

ACTION_NAMES = [
    "drink water",
    "eat meal",
    "brush teeth",
    "wave hand",
    "kick ball",
    "jump up",
    "sit down",
    "stand up",
    "clap hands",
    "throw ball",
    "pick up",
    "put on hat",
    "take off hat",
    "point finger",
    "brush hair",
    "hop on one leg",
]

INSTRUCTION_TEMPLATE = "Given a sequence of action tokens [tokens], please predict the corresponding action."
LIST_TEMPLATE = "Given a sequence of action tokens [tokens], please predict the corresponding action from [list]."

_SUBJECTS = ["a person", "the man", "the woman", "a child", "the player", "an athlete", "my friend",
             "the teacher", "the old man", "a girl", "a boy", "the dancer"]
_BODY = ["arm", "hand", "leg", "foot", "head", "mouth", "finger", "knee", "hip", "shoulder", "back",
         "neck", "elbow", "wrist", "body", "arms", "legs", "hands", "feet"]
_PLACES = ["room", "kitchen", "park", "office", "garden", "yard", "hall", "street", "gym", "school",
           "house", "field", "beach", "bedroom"]
_OBJECTS = ["cup", "glass", "bottle", "plate", "spoon", "chair", "table", "door", "window", "book",
            "phone", "bag", "towel", "brush", "box", "shoe"]
_ADVERBS = ["slowly", "quickly", "carefully", "often", "sometimes", "again", "happily", "gently",
            "twice", "every", "day", "morning", "evening", "now", "later"]
_VERBS = ["moves", "raises", "lowers", "bends", "turns", "holds", "lifts", "shakes", "swings", "uses",
          "stretches", "rotates"]

_SENTENCE_TEMPLATES = [
    "{subj} can {name} .",
    "{subj} is going to {name} in the {place} .",
    "{subj} likes to {name} {adv} .",
    "to {name} , {subj} {verb} the {body} .",
    "when people {name} they use the {body} and the {body} .",
    "{subj} {verb} the {body} to {name} .",
    "in the {place} , {subj} will {name} with a {obj} .",
    "{subj} {verb} a {obj} and then {verb} the {body} .",
    "the action {name} needs the {body} .",
    "{subj} did not {name} in the {place} .",
    "after {subj} {verb} the {obj} , the next action is {name} .",
]

_TOKEN_RE = re.compile(r"[a-z0-9<>]+|[.,]")


def tokenize_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def template_pieces(template: str) -> tuple[list[str], list[str], list[str] | None]:
    """Split a template into words before ``[tokens]``, between it and ``[list]``, and after.

    The last element is None when the template has no ``[list]`` slot.
    """
    head, _, tail = template.partition("[tokens]")
    if "[list]" in tail:
        mid, _, end = tail.partition("[list]")
        return tokenize_words(head), tokenize_words(mid), tokenize_words(end)
    return tokenize_words(head), tokenize_words(tail), None


def format_class_list(names: list[str]) -> list[str]:
    words: list[str] = []
    for i, name in enumerate(names):
        if i:
            words.append(",")
        words.extend(tokenize_words(name))
    return words


def _fill(template: str, rng: np.random.Generator, name: str) -> str:
    pick = lambda seq: seq[rng.integers(len(seq))]  # noqa: E731
    out = template
    for key, pool in (("{subj}", _SUBJECTS), ("{place}", _PLACES), ("{adv}", _ADVERBS),
                      ("{verb}", _VERBS), ("{body}", _BODY), ("{obj}", _OBJECTS)):
        while key in out:
            out = out.replace(key, pick(pool), 1)
    return out.replace("{name}", name)


def build_corpus(rng: np.random.Generator, names: list[str] | None = None, sentences: int = 3000,
                 slot_length: int = 16, instruction_share: float = 0.35) -> list[list[str]]:
    """Sentences as word lists, each terminated by ``<eos>``."""
    names = list(ACTION_NAMES if names is None else names)
    head, mid, tail = template_pieces(INSTRUCTION_TEMPLATE)
    lhead, lmid, ltail = template_pieces(LIST_TEMPLATE)
    plain_words = sorted({w for t in _SENTENCE_TEMPLATES for w in tokenize_words(t.replace("{", " ").replace("}", " "))}
                         | {w for pool in (_SUBJECTS, _BODY, _PLACES, _OBJECTS, _ADVERBS, _VERBS)
                            for p in pool for w in tokenize_words(p)})
    plain_words = [w for w in plain_words if w not in {"subj", "place", "adv", "verb", "body", "obj", "name"}]

    corpus: list[list[str]] = []
    for _ in range(sentences):
        name = names[rng.integers(len(names))]
        roll = rng.uniform()
        if roll < instruction_share:
            filler = [plain_words[i] for i in rng.integers(len(plain_words), size=slot_length)]
            if rng.uniform() < 0.5:
                words = head + filler + mid + tokenize_words(name)
            else:
                listed = [names[i] for i in rng.choice(len(names), size=3, replace=False)]
                answer = listed[rng.integers(3)]
                words = lhead + filler + lmid + format_class_list(listed) + (ltail or []) + tokenize_words(answer)
        else:
            words = tokenize_words(_fill(_SENTENCE_TEMPLATES[rng.integers(len(_SENTENCE_TEMPLATES))], rng, name))
        corpus.append(words + [EOS])
    return corpus


def build_vocabulary(corpus: list[list[str]]) -> list[str]:
    words = sorted({w for sent in corpus for w in sent} - {PAD, EOS})
    return [PAD, EOS] + words
