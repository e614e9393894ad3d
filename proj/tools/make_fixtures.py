#!/usr/bin/env python3
# Copyright (c) 2026, dialogtune contributors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the synthetic fixtures under data/fixtures/.

The corpus uses the " +++$+++ " field format; every line is invented.
"""
import json
import random
from pathlib import Path

SEP = " +++$+++ "
OUT = Path(__file__).resolve().parent.parent / "data" / "fixtures"

OPENERS = ["Where were you last night?", "You can't just walk out on me.", "We need to talk about the money.",
           "The car won't start again.", "Did you hear what she said?", "I never asked for any of this.",
           "They found the boat by the river.", "You promised you'd be here.", "How long have you known?",
           "The train leaves at midnight.", "I think someone is following us.", "What do you want from me?",
           "He's not coming back.", "Tell me the truth for once.", "We could leave tonight.",
           "I saw you with him.", "The captain wants a word.", "Nobody leaves this room.",
           "You look like you've seen a ghost.", "This is the last time I ask."]
REPLIES = ["I was working late, I swear.", "Watch me.", "There is no money. Not anymore.",
           "Then we walk.", "Every word of it.", "None of us did.", "Whose boat?", "I'm here now, aren't I?",
           "Long enough.", "Then we'd better hurry.", "Don't turn around.", "Just the truth.",
           "He will. He always does.", "You couldn't handle it.", "And go where?", "It isn't what you think.",
           "Tell him I'm busy.", "Says who?", "Maybe I have.", "Then stop asking."]
FOLLOWS = ["Don't lie to me.", "Fine. Have it your way.", "You always say that.", "Are you sure?",
           "Okay. Okay, I believe you.", "We'll see about that.", "Why now?", "I don't know anymore.",
           "Then what are we doing here?", "Keep your voice down."]


def main() -> None:
    rng = random.Random(20260101)
    OUT.mkdir(parents=True, exist_ok=True)
    lines, convs = [], []
    next_line = 1000
    for c in range(50):
        movie = f"m{c % 7}"
        chars = [(f"u{2 * c}", f"ALEX{c}"), (f"u{2 * c + 1}", f"SAM{c}")]
        # conversation 0 has exactly three lines; the rest 2..6
        n = 3 if c == 0 else rng.randint(2, 6)
        ids = []
        texts = [rng.choice(OPENERS), rng.choice(REPLIES)] + [rng.choice(FOLLOWS) for _ in range(n - 2)]
        for k, text in enumerate(texts):
            lid = f"L{next_line}"
            next_line += 1
            cid, name = chars[k % 2]
            lines.append(SEP.join([lid, cid, movie, name, text]))
            ids.append(lid)
        convs.append(SEP.join([chars[0][0], chars[1][0], movie, "[" + ", ".join(f"'{i}'" for i in ids) + "]"]))
    # one malformed utterance row and one conversation naming an unknown line
    lines.append(SEP.join(["L9998", "u998", "m0", "BROKEN"]))
    convs.append(SEP.join(["u0", "u1", "m0", "['L1000', 'L9999']"]))
    rng.shuffle(lines)
    (OUT / "movie_lines.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (OUT / "movie_conversations.txt").write_text("\n".join(convs) + "\n", encoding="utf-8")

    variants = ["base", "sft", "dpo"]
    picks = ["dpo"] * 52 + ["sft"] * 37 + ["base"] * 11
    rng.shuffle(picks)
    with open(OUT / "ballots_52_37_11.jsonl", "w", encoding="utf-8") as f:
        for i, pick in enumerate(picks):
            order = variants[:]
            rng.shuffle(order)
            f.write(json.dumps({"ballot_id": f"fixture/{i}", "prompt_id": i % 50,
                                "evaluator_id": "evaluator-a" if i < 50 else "evaluator-b",
                                "order": order, "selected_position": order.index(pick)}) + "\n")


if __name__ == "__main__":
    main()
