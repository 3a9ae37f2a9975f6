"""Regenerate the shipped fixture corpora under src/specdec/data/.

captions.txt is templated caption-like English. captions_shifted.txt is the
same text with vowels rotated (a->e->i->o->u->a), which keeps the consonant
skeleton but moves every vowel, giving a target whose greedy continuations
disagree with a model trained on the original text.
"""

import random
from pathlib import Path

SUBJECTS = ["a small dog", "the old man", "two children", "a red car", "the black cat",
            "a young woman", "three birds", "the tall tree", "a wooden boat", "the green bus"]
VERBS = ["sits", "stands", "waits", "runs", "rests", "plays", "looks", "moves"]
PREPS = ["on", "near", "under", "behind", "beside", "in front of", "next to"]
PLACES = ["the table", "the river", "a stone wall", "the house", "the road",
          "a park bench", "the window", "the snowy hill"]
TAILS = ["", " at night", " in the rain", " on a sunny day", " with a friend"]

ROTATE = str.maketrans("aeiou", "eioua")


def caption(rng: random.Random) -> str:
    return (f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(PREPS)} "
            f"{rng.choice(PLACES)}{rng.choice(TAILS)}.")


def main() -> None:
    rng = random.Random(20240607)
    lines = [caption(rng) for _ in range(400)]
    out = Path(__file__).resolve().parents[1] / "src" / "specdec" / "data"
    out.mkdir(parents=True, exist_ok=True)
    (out / "captions.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "captions_shifted.txt").write_text(
        "\n".join(line.translate(ROTATE) for line in lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
