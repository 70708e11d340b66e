#!/usr/bin/env python3
"""Export a pretrained causal LM's outputs as an icprobe dump file.

Reads stimulus sets written by `icprobe gen`, runs the model once per
sequence and writes the JSON-lines format read by the `external` backend:
a header line, then one record per word sequence with word-level
surprisal (bits), per-layer word states and, for completion prompts, the
next-token distribution.

Referential frames get both pronoun continuations. Word states are the
state of each word's last subword token; layer 0 is the first block.

    python scripts/export_hf_dump.py --model gpt2 --out gpt2.dump.jsonl \
        referential-mismatch.jsonl referential-match.jsonl \
        completion.jsonl rc_reading.jsonl

Requires torch and transformers.
"""

import argparse
import json
import math
import sys

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


def read_stimuli(path):
    with open(path, encoding="utf-8") as f:
        lines = [json.loads(l) for l in f if l.strip()]
    if not lines or lines[0].get("format") != "icprobe.stimuli":
        sys.exit(f"{path}: not an icprobe stimulus set")
    return lines[0]["kind"], lines[1:]


def sequences(paths):
    seen = set()
    for path in paths:
        kind, stimuli = read_stimuli(path)
        for st in stimuli:
            variants = [st["words"] + [p] for p in ("he", "she")] if kind == "referential" else [st["words"]]
            for words in variants:
                key = tuple(words)
                if key not in seen:
                    seen.add(key)
                    yield words, kind == "completion"


def encode(tok, words):
    """Token ids with a leading BOS, and the last token index of each word."""
    ids = [tok.bos_token_id]
    ends = []
    for i, w in enumerate(words):
        ids.extend(tok.encode(w if i == 0 else " " + w, add_special_tokens=False))
        ends.append(len(ids) - 1)
    return ids, ends


def token_words(tok):
    words = []
    for i in range(len(tok)):
        text = tok.decode([i])
        words.append(text[1:] if text.startswith(" ") and text[1:].isalpha() else None)
    return words


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--model", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--no-hidden", action="store_true", help="omit hidden states")
    ap.add_argument("stimuli", nargs="+")
    args = ap.parse_args()

    tok = AutoTokenizer.from_pretrained(args.model)
    model = AutoModelForCausalLM.from_pretrained(args.model, output_hidden_states=True).eval()
    cfg = model.config
    header = {
        "format": "icprobe.dump",
        "version": 1,
        "name": args.model,
        "n_layers": cfg.num_hidden_layers,
        "hidden_dim": cfg.hidden_size,
        "word_level": False,
        "tokens": [tok.convert_ids_to_tokens(i) for i in range(len(tok))],
        "words": token_words(tok),
    }
    ln2 = math.log(2)
    with open(args.out, "w", encoding="utf-8") as out, torch.no_grad():
        out.write(json.dumps(header) + "\n")
        for words, with_next in sequences(args.stimuli):
            ids, ends = encode(tok, words)
            res = model(torch.tensor([ids]))
            logp = torch.log_softmax(res.logits[0].double(), dim=-1)
            surprisal = []
            start = 1
            for end in ends:
                lp = sum(logp[t - 1, ids[t]].item() for t in range(start, end + 1))
                surprisal.append(max(0.0, -lp / ln2))
                start = end + 1
            rec = {"words": words, "surprisal": surprisal}
            if not args.no_hidden:
                rec["hidden"] = [[layer[0, e].tolist() for e in ends] for layer in res.hidden_states[1:]]
            if with_next:
                rec["next"] = logp[-1].exp().tolist()
            out.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
