#!/usr/bin/env python3
"""Generates the demo rollouts and the branching replay set.

Demo rollouts: one recheck per rollout, drawn from five topic clusters whose
outcome mix is fixed (geometry 40/40 unnecessary, modular 37/40, dice 20/40,
sequences 6/40, quadratics 40/40), plus inconclusive rollouts that must never
reach the pool.

Replay set: ten three-part problems. Each part ends in one recheck; the
suppressed branch replaces its verification block. Golden eds traces at
tau 0.8 are assembled here from the cluster design (geometry, modular and
quadratic rechecks get suppressed), independently of the C++ code.

Usage: make_fixtures.py [--out assets]
"""

import argparse
import json
import random
import re
from pathlib import Path

SIGNAL = "This result does not require further checking, let me proceed to the next step."

ACTIVATIONS = [
    "Let me double-check this result.",
    "Let me verify this value.",
    "Wait, let me recheck that computation.",
    "I should double-check this before moving on.",
    "Let me make sure this is right.",
    "Hold on, let me verify that number.",
    "Let me recompute this to be safe.",
]


def geometry(rng):
    a, b = rng.choice([(6, 8), (5, 12), (8, 15), (9, 12), (12, 16), (7, 24), (10, 24), (20, 21), (12, 35), (15, 20)])
    ab, area = a * b, a * b // 2
    return dict(
        topic="geometry",
        question=f"A right triangle has legs {a} and {b}; find its area.",
        steps=[
            f"Consider the right triangle with legs {a} and {b}; we need the area of the triangle, and the "
            f"hypotenuse is not required for it.",
            "For a right triangle the two legs are perpendicular, so one leg is the base, the other leg is the "
            "height, and the triangle area is half the product of the legs.",
            "The product of the legs is {ab}, so half of the product of the legs gives the triangle area.",
            "So the area of the right triangle is {v}.",
        ],
        value=area,
        wrong=area + 2,
        fields=dict(ab=ab, wab=ab + 4),
        verify=f" Half of {a} times {b} is half of {ab}, which is {{v}}.",
        verify_more=f" Using the legs in the other order gives the same product {ab}, and halving that product "
        f"of the legs lands on {area} for the triangle area.",
    )


def modular(rng):
    m = rng.choice([7, 9, 11, 13, 17, 19, 23])
    q = rng.randint(12, 90)
    r = rng.randint(1, m - 1)
    n = q * m + r
    return dict(
        topic="modular",
        question=f"Find the remainder when {n} is divided by {m}.",
        steps=[
            f"We want the remainder when the dividend {n} is divided by the divisor {m}, working modulo {m}.",
            "The remainder modulo the divisor is unchanged when we subtract multiples of the divisor, so we "
            "reduce the dividend by the largest multiple of the divisor below it and keep the residue.",
            f"The largest multiple of {m} not exceeding {n} is {q * m}, and subtracting it from the dividend "
            "leaves the residue.",
            f"So the remainder of {n} modulo {m} is {{v}}.",
        ],
        value=r,
        wrong=(r + 1) % m,
        fields={},
        verify=f" Writing {n} as {q} times {m} plus the residue leaves {{v}} as the residue.",
        verify_more=f" The residue {r} lies between 0 and {m - 1}, as a remainder modulo {m} must, and the "
        f"quotient {q} times the divisor plus the remainder rebuilds the dividend {n}.",
    )


DICE_COUNTS = {2: 1, 3: 2, 4: 3, 5: 4, 6: 5, 7: 6, 8: 5, 9: 4, 10: 3, 11: 2, 12: 1}


def dice(rng):
    s = rng.choice([4, 5, 6, 7, 8, 9, 10])
    c = DICE_COUNTS[s]
    pairs = ", ".join(f"({i},{s - i})" for i in range(1, 7) if 1 <= s - i <= 6)
    return dict(
        topic="dice",
        question=f"Two fair dice are rolled; how many of the 36 outcomes give a sum of {s}?",
        steps=[
            f"Two fair dice are rolled, and we count the outcomes where the sum of the two faces is {s}.",
            "There are 36 equally likely ordered outcomes for the pair of dice faces, so the probability of a "
            "sum is the number of favorable ordered outcomes over 36.",
            f"The favorable ordered outcomes for a dice sum of {s} are the pairs {pairs}.",
            f"So the number of favorable outcomes for a sum of {s} is {{v}}.",
        ],
        value=c,
        wrong=c + 1,
        fields={},
        verify=f" Counting the listed pairs of faces one by one gives {{v}} favorable outcomes for the sum {s}.",
        verify_more=f" Each first die face from 1 to 6 pairs with at most one second face, and the faces that "
        f"work for a sum of {s} give {c} ordered outcomes, so the dice probability is {c} over 36.",
    )


def sequence(rng):
    a, d, n = rng.randint(2, 20), rng.randint(2, 9), rng.randint(8, 30)
    t = a + (n - 1) * d
    return dict(
        topic="sequence",
        question=f"An arithmetic sequence has first term {a} and common difference {d}; find term number {n}.",
        steps=[
            f"The arithmetic sequence starts at the first term {a} with common difference {d}, and we want "
            f"term number {n} of the sequence.",
            "Each term of an arithmetic sequence adds the common difference to the previous term, so the term "
            "at index n equals the first term plus the common difference times the index minus one.",
            f"The index minus one is {n - 1}, and {n - 1} times the common difference {d} is {(n - 1) * d}.",
            f"So term number {n} of the arithmetic sequence is {{v}}.",
        ],
        value=t,
        wrong=t + d,
        fields={},
        verify=f" Starting from the first term {a} and adding the common difference {d} a total of {n - 1} "
        f"times lands on {{v}}.",
        verify_more=f" The term before it is {t - d} and the term after it is {t + d}, and both differ from "
        f"{t} by the common difference {d} of the sequence.",
    )


def quadratic(rng):
    r1, r2 = rng.randint(1, 12), rng.randint(1, 12)
    s, p = r1 + r2, r1 * r2
    v = s * s - 2 * p
    return dict(
        topic="quadratic",
        question=f"The quadratic x^2 - {s}x + {p} = 0 has two roots; find the sum of the squares of the roots.",
        steps=[
            f"The monic quadratic x^2 - {s}x + {p} = 0 has two roots, and we want the sum of the squares of "
            "the roots.",
            "By Vieta, the sum of the roots equals the negated linear coefficient and the product of the roots "
            "equals the constant coefficient, and the sum of squares of the roots is the squared sum minus "
            "twice the product.",
            f"The sum of the roots is {s} and the product of the roots is {p}, so the squared sum is {s * s} "
            f"and twice the product is {2 * p}.",
            "So the sum of the squares of the roots is {v}.",
        ],
        value=v,
        wrong=v + 4,
        fields={},
        verify=f" Subtracting twice the product {2 * p} from the squared sum {s * s} of the roots gives {{v}}.",
        verify_more=f" The discriminant {s * s - 4 * p} is not negative, so the quadratic has real roots, and "
        f"the roots {r1} and {r2} have squares adding to {v}.",
    )


TOPICS = {"geometry": geometry, "modular": modular, "dice": dice, "sequence": sequence, "quadratic": quadratic}
# Unnecessary count out of 40 labeled rollouts per topic.
UNNECESSARY = {"geometry": 40, "modular": 37, "dice": 20, "sequence": 6, "quadratic": 40}
SUPPRESSED_AT_08 = {"geometry", "modular", "quadratic"}


def fill(text, part, v, wrong=None):
    fields = dict(part["fields"])
    if wrong is not None and "wab" in fields:
        fields["ab"] = fields["wab"]
    return text.format(v=v, **fields)


def demo_rollout(rng, topic, idx, outcome):
    part = TOPICS[topic](rng)
    v, w = part["value"], part["wrong"]
    stated = w if outcome == "necessary" else v
    steps = [fill(s, part, stated, wrong=stated if outcome == "necessary" else None) for s in part["steps"]]
    if idx % 3 == 0:
        steps.insert(1, "Let me set up the relevant formula first.")
    act = rng.choice(ACTIVATIONS)
    if outcome == "unnecessary":
        tail = fill(part["verify"], part, v) + " That is the same result as before."
        nxt = f"With that value settled at {v}, we can state the answer."
    elif outcome == "necessary":
        tail = fill(part["verify"], part, v) + f" That is not {w}, so I made a mistake earlier and the value should be {v}."
        nxt = f"Using the corrected value {v}, we can state the answer."
    else:
        tail = fill(part["verify"], part, v)
        nxt = "We now turn to the final statement."
    steps[-1] = steps[-1] + " " + act + tail
    steps.append(nxt)
    if idx % 4 == 1:
        steps.append("Alternatively, we could try a different approach with a table of values.")
    steps.append(f"So the answer is {v}.")
    return dict(problem_id=f"demo-{topic}-{idx:03d}", raw_text="\n\n".join(steps), model="demo-model",
                meta=dict(topic=topic, designed_outcome=outcome))


def tokens_of(text):
    return re.findall(r"\s*\S+|\s+$", text)


def replay_problem(rng, pid, topics):
    parts = [TOPICS[t](rng) for t in topics]
    text = "<think>\n"
    branches = {}
    golden = []  # (offset, not_suppressed_len, suppressed_text) for suppressed ones
    suppressed_full = 0
    for i, part in enumerate(parts):
        v = part["value"]
        steps = [fill(s, part, v) for s in part["steps"]]
        if i == 1:
            steps.insert(1, "Let me set up the relevant formula first.")
        if i > 0:
            text += "\n\n"
        text += "\n\n".join(steps[:-1]) + "\n\n" + steps[-1] + " " + rng.choice(ACTIVATIONS)
        offset = len(text.encode())
        verification = fill(part["verify"], part, v) + part["verify_more"] + " That is the same result as before."
        suppressed = f" We keep {v} for this part."
        branches[str(offset)] = dict(suppressed=tokens_of(suppressed), not_suppressed=tokens_of(verification))
        if part["topic"] in SUPPRESSED_AT_08:
            golden.append((offset, len(verification.encode()), suppressed))
        suppressed_full += 1
        text += verification
        text += f"\n\nWith the value {v} settled for part {i + 1}, we continue."
        if i == 0:
            text += "\n\nAlternatively, we could try a different approach with a table of values, but the direct route works."
    total = sum(p["value"] for p in parts)
    text += "\n\nAdding the part answers " + " + ".join(str(p["value"]) for p in parts) + f" gives {total}."
    text += f"\n</think>\n\nThe final answer is \\boxed{{{total}}}."

    raw = text.encode()
    out, cursor = b"", 0
    for offset, ns_len, suppressed in golden:
        out += raw[cursor:offset] + (" " + SIGNAL + suppressed).encode()
        cursor = offset + ns_len
    out += raw[cursor:]

    question = " ".join(f"Part {i + 1}: {p['question']}" for i, p in enumerate(parts))
    question += " Give the sum of the part answers."
    fixture = dict(
        prompt=question,
        default_stream=tokens_of(text),
        branches=branches,
        reference_answer=str(total),
        topics=topics,
        expected=dict(eds_suppressions=len(golden), full_suppress_suppressions=suppressed_full,
                      activations=suppressed_full),
    )
    return fixture, out.decode(), dict(problem_id=pid, question=question, reference_answer=str(total))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "assets"))
    args = ap.parse_args()
    out = Path(args.out)
    rng = random.Random(20251016)

    rollouts = []
    for topic in TOPICS:
        outcomes = ["unnecessary"] * UNNECESSARY[topic] + ["necessary"] * (40 - UNNECESSARY[topic])
        outcomes += ["inconclusive"] * 3
        rng.shuffle(outcomes)
        for idx, outcome in enumerate(outcomes):
            rollouts.append(demo_rollout(rng, topic, idx, outcome))
    (out / "demo").mkdir(parents=True, exist_ok=True)
    with open(out / "demo" / "rollouts.jsonl", "w") as f:
        for r in rollouts:
            f.write(json.dumps(r) + "\n")

    plans = [
        ["geometry", "dice", "modular"],
        ["sequence", "quadratic", "geometry"],
        ["modular", "sequence", "dice"],
        ["quadratic", "geometry", "sequence"],
        ["dice", "modular", "quadratic"],
        ["geometry", "sequence", "dice"],
        ["sequence", "dice", "modular"],
        ["quadratic", "dice", "sequence"],
        ["dice", "sequence", "geometry"],
        ["modular", "dice", "sequence"],
    ]
    rdir = out / "replay"
    (rdir / "fixtures").mkdir(parents=True, exist_ok=True)
    (rdir / "golden").mkdir(parents=True, exist_ok=True)
    with open(rdir / "dataset.jsonl", "w") as ds:
        for i, topics in enumerate(plans):
            pid = f"r{i + 1:02d}"
            fixture, golden, row = replay_problem(rng, pid, topics)
            (rdir / "fixtures" / f"{pid}.json").write_text(json.dumps(fixture, indent=1) + "\n")
            (rdir / "golden" / f"{pid}.txt").write_bytes(golden.encode())
            ds.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
