#!/usr/bin/env python3
"""Exports a DistilBERT checkpoint into the asset layout read by toneshift.

    python3 tools/export_distilbert.py --model distilbert-base-uncased --out models/distilbert

Writes config.json, vocab.txt and weights.bin (float32, little endian) to --out.
Then point TONESHIFT_MODEL_DIR at that directory.
"""
import argparse
import json
import os
import struct

import numpy as np

MAGIC = b"TSWT0001"


def write_weights(state_dict, path):
    tensors = []
    offset = 0
    arrays = []
    for name, tensor in state_dict.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().float().numpy(), dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        arrays.append(arr)
    header = json.dumps({"tensors": tensors, "dtype": "float32", "endianness": "little"}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for arr in arrays:
            f.write(arr.tobytes())


def export(model, vocab_tokens, out_dir, do_lower_case=True, name="distilbert"):
    os.makedirs(out_dir, exist_ok=True)
    cfg = model.config
    config = {
        "name": name,
        "vocab_size": cfg.vocab_size,
        "dim": cfg.dim,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "hidden_dim": cfg.hidden_dim,
        "max_position_embeddings": cfg.max_position_embeddings,
        "activation": cfg.activation,
        "do_lower_case": do_lower_case,
        "layer_norm_eps": 1e-12,
    }
    if cfg.activation != "gelu":
        raise SystemExit("only the gelu activation is supported")
    if getattr(cfg, "sinusoidal_pos_embds", False):
        # Sinusoidal tables are still stored as position_embeddings.weight.
        pass
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config, f, indent=2)
    with open(os.path.join(out_dir, "vocab.txt"), "w", encoding="utf-8") as f:
        for tok in vocab_tokens:
            f.write(tok + "\n")
    state = {k: v for k, v in model.state_dict().items() if not k.startswith("vocab_")}
    write_weights(state, os.path.join(out_dir, "weights.bin"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", required=True, help="hub name or local directory")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    from transformers import AutoTokenizer, DistilBertModel

    model = DistilBertModel.from_pretrained(args.model).eval()
    tok = AutoTokenizer.from_pretrained(args.model)
    vocab = [t for t, _ in sorted(tok.get_vocab().items(), key=lambda kv: kv[1])]
    lower = bool(getattr(tok, "do_lower_case", True))
    export(model, vocab, args.out, do_lower_case=lower, name=os.path.basename(args.model.rstrip("/")))


if __name__ == "__main__":
    main()
