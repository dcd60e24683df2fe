#!/usr/bin/env python3
"""Regenerates the bundled fixture corpora under data/fixtures/.

Both corpora are synthesized from small hand-written grammars, so the text is
license-clean by construction. The output is deterministic for a given seed.

  english.txt  ~750 KB of English-like prose (Stage A, alignment, BPE).
  kazakh.txt   ~300 KB of an agglutinative Cyrillic language with vowel
               harmony and suffix chains (Stage B, distribution shift).

Documents are paragraphs separated by one blank line.
"""

import argparse
import random
from pathlib import Path

EN_NOUNS = """
river town village market bridge garden forest mountain valley harbor ship
farmer teacher doctor merchant sailor child mother father sister brother
friend neighbor king queen soldier baker miller weaver smith hunter shepherd
horse dog cat bird sheep cow goat fox wolf bear deer rabbit owl crow fish
house school church mill road field meadow lake island castle tower wall
window door table chair book letter story song lamp candle fire stone tree
flower apple bread cheese milk water wine coat boat cart wheel hammer rope
morning evening night winter summer spring autumn storm rain snow wind cloud
sun moon star sky sea shore hill path gate fence barn well orchard kitchen
council festival journey lesson question answer promise secret reason plan
""".split()

EN_ADJS = """
old young small large quiet busy bright dark cold warm green golden gray
narrow wide long short heavy light gentle proud tired happy careful clever
patient strange simple ancient new red blue white black brown silent kind
honest brave lonely hungry early late distant nearby wooden stone rich poor
""".split()

EN_VERBS_T = [
    ("sees", "saw"), ("finds", "found"), ("carries", "carried"),
    ("builds", "built"), ("paints", "painted"), ("follows", "followed"),
    ("repairs", "repaired"), ("watches", "watched"), ("visits", "visited"),
    ("remembers", "remembered"), ("sells", "sold"), ("buys", "bought"),
    ("opens", "opened"), ("closes", "closed"), ("guards", "guarded"),
    ("describes", "described"), ("brings", "brought"), ("keeps", "kept"),
    ("cleans", "cleaned"), ("measures", "measured"),
]

EN_VERBS_I = [
    ("sleeps", "slept"), ("waits", "waited"), ("sings", "sang"),
    ("laughs", "laughed"), ("works", "worked"), ("rests", "rested"),
    ("walks", "walked"), ("travels", "traveled"), ("listens", "listened"),
    ("wonders", "wondered"), ("returns", "returned"), ("arrives", "arrived"),
]

EN_PREPS = "near behind beyond across under over beside toward through along".split()
EN_ADVS = "slowly quickly quietly carefully often rarely always gladly".split()
EN_TIME = [
    "In the morning", "At night", "Every winter", "Before the storm",
    "After the festival", "Long ago", "On the third day", "That summer",
    "When the bells rang", "Later that evening",
]
EN_NAMES = """
Anna Marta Tomas Peter Elena Ivan Clara Hugo Lina Oskar Nora Felix Ada Jonas
Vera Emil Rosa Paul Ida Leo
""".split()


def en_np(rng):
    parts = [rng.choice(["the", "the", "a", "one", "every", "that"])]
    if rng.random() < 0.55:
        parts.append(rng.choice(EN_ADJS))
    noun = rng.choice(EN_NOUNS)
    if parts[0] in ("the", "that") and rng.random() < 0.2:
        noun = noun + "s" if not noun.endswith("s") else noun
        parts[0] = "the"
    parts.append(noun)
    if parts[0] == "a" and parts[1][0] in "aeiou":
        parts[0] = "an"
    return " ".join(parts)


def en_subject(rng):
    return rng.choice(EN_NAMES) if rng.random() < 0.3 else en_np(rng)


def en_clause(rng, past):
    subj = en_subject(rng)
    if rng.random() < 0.6:
        verb = rng.choice(EN_VERBS_T)[1 if past else 0]
        out = f"{subj} {verb} {en_np(rng)}"
    else:
        verb = rng.choice(EN_VERBS_I)[1 if past else 0]
        out = f"{subj} {verb}"
    if rng.random() < 0.45:
        out += f" {rng.choice(EN_PREPS)} {en_np(rng)}"
    if rng.random() < 0.25:
        out += f" {rng.choice(EN_ADVS)}"
    return out


def en_sentence(rng):
    past = rng.random() < 0.6
    s = en_clause(rng, past)
    r = rng.random()
    if r < 0.2:
        s = f"{rng.choice(EN_TIME)}, {s[0].lower() + s[1:] if not s.split()[0] in EN_NAMES else s}"
    elif r < 0.4:
        s += f", and {en_clause(rng, past)}"
    elif r < 0.5:
        s += f" because {en_clause(rng, past)}"
    s = s[0].upper() + s[1:]
    end = "." if rng.random() < 0.9 else rng.choice(["!", "?"])
    if rng.random() < 0.08:
        return f'"{s}{end}" said {rng.choice(EN_NAMES)}.'
    return s + end


def english(rng, target_bytes):
    docs, total = [], 0
    while total < target_bytes:
        para = " ".join(en_sentence(rng) for _ in range(rng.randint(2, 7)))
        docs.append(para)
        total += len(para.encode("utf-8")) + 2
    return "\n\n".join(docs) + "\n"


# Agglutinative language: stems take ordered suffix chains whose vowels
# follow front/back harmony, loosely modeled on Turkic morphology.
KK_BACK_STEMS = """
бала қала жол тау су ат адам дала бақ қыз ағаш тас құс қар жаңбыр
орман қасқыр арба отан ұя жұмыс кітап сабақ дос ана ата аға апа
""".split()
KK_FRONT_STEMS = """
мектеп өзен көл үй ел жер кеме сөз түн күн бөрі ерке есік іні
көше мерекe шөп терезе білім жеміс әке әже әріп
""".replace("e ", "е ").split()
KK_BACK_VERBS = "бар ал оқы жаз сал ойна тұр жұмыста қара тап".split()
KK_FRONT_VERBS = "кел біл көр сөйле ізде жүр сез бер іш тербел".split()

KK_FRONT_VOWELS = set("еәөүіэ")
KK_BACK_VOWELS = set("аоұыя")


def kk_front(stem):
    for ch in reversed(stem):
        if ch in KK_FRONT_VOWELS:
            return True
        if ch in KK_BACK_VOWELS:
            return False
    return False


def kk_vowel_final(stem):
    return stem[-1] in "аеәоөұүыіэюя"


def kk_noun(rng):
    front = rng.random() < 0.5
    stem = rng.choice(KK_FRONT_STEMS if front else KK_BACK_STEMS)
    front = kk_front(stem)
    word = stem
    if rng.random() < 0.4:
        word += ("лер" if front else "лар") if kk_vowel_final(word) else ("тер" if front else "тар")
    if rng.random() < 0.35:
        word += rng.choice(["ім", "ің", "і"] if front else ["ым", "ың", "ы"]) if not kk_vowel_final(word) \
            else rng.choice(["м", "ң", "сі"] if front else ["м", "ң", "сы"])
    case = rng.random()
    if case < 0.2:
        word += ("ге" if front else "ға") if kk_vowel_final(word) else ("ке" if front else "қа")
    elif case < 0.35:
        word += ("де" if front else "да") if kk_vowel_final(word) else ("те" if front else "та")
    elif case < 0.5:
        word += ("ден" if front else "дан") if kk_vowel_final(word) else ("тен" if front else "тан")
    elif case < 0.65:
        word += ("ні" if front else "ны") if kk_vowel_final(word) else ("ті" if front else "ты")
    elif case < 0.75:
        word += ("нің" if front else "ның") if kk_vowel_final(word) else ("тің" if front else "тың")
    return word


def kk_verb(rng):
    front = rng.random() < 0.5
    stem = rng.choice(KK_FRONT_VERBS if front else KK_BACK_VERBS)
    front = kk_front(stem)
    word = stem
    if rng.random() < 0.2:
        word += "ма" if not front else "ме"
    tense = rng.random()
    if tense < 0.4:
        word += ("ді" if front else "ды") if kk_vowel_final(word) else ("ті" if front else "ты")
        word += rng.choice(["", "м", "ң", "қ" if not front else "к"])
    elif tense < 0.7:
        word += ("й" if kk_vowel_final(word) else ("е" if front else "а"))
        word += rng.choice(["мын", "сың", "ды", "мыз"] if not front else ["мін", "сің", "ді", "міз"])
    else:
        word += ("ген" if front else "ған") if kk_vowel_final(word) else ("кен" if front else "қан")
    return word


def kk_sentence(rng):
    words = [kk_noun(rng) for _ in range(rng.randint(1, 4))]
    if rng.random() < 0.3:
        words.insert(rng.randint(0, len(words)), rng.choice(["өте", "тез", "ақырын", "бүгін", "кеше", "ертең", "және"]))
    words.append(kk_verb(rng))
    s = " ".join(words)
    s = s[0].upper() + s[1:]
    if rng.random() < 0.15:
        s += ", " + " ".join([kk_noun(rng), kk_verb(rng)])
    return s + ("." if rng.random() < 0.9 else rng.choice(["!", "?"]))


def kazakh(rng, target_bytes):
    docs, total = [], 0
    while total < target_bytes:
        para = " ".join(kk_sentence(rng) for _ in range(rng.randint(2, 6)))
        docs.append(para)
        total += len(para.encode("utf-8")) + 2
    return "\n\n".join(docs) + "\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "fixtures"))
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--english-bytes", type=int, default=750_000)
    ap.add_argument("--kazakh-bytes", type=int, default=300_000)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "english.txt").write_text(english(random.Random(args.seed), args.english_bytes), encoding="utf-8")
    (out / "kazakh.txt").write_text(kazakh(random.Random(args.seed + 1), args.kazakh_bytes), encoding="utf-8")

    words = sorted(set(EN_NOUNS + EN_ADJS + [v for p in EN_VERBS_T + EN_VERBS_I for v in p] + EN_PREPS + EN_ADVS))
    (out / "english_words.txt").write_text("\n".join(words) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
