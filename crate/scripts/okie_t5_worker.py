#!/usr/bin/env python3
"""Model worker for `okie` worker backends.

Reads one JSON request per line on stdin and answers on stdout:

    {"op": "generate", "inputs": [...]}        -> {"ok": true, "outputs": [...]}
    {"op": "register", "tokens": [...]}        -> {"ok": true, "registered": [...]}
    {"op": "fine_tune", "pairs": [...], "config": {...}}
        -> {"event": "epoch", "epoch": k, "loss": x} after every epoch, then
           serves further requests until {"op": "resume"};
           finally {"event": "done", "epochs": n, "pairs_seen": m, "loss": x}
    {"op": "shutdown"}

Needs `torch` and `transformers`; the model is loaded from `--model DIR`.
"""

import argparse
import json
import random
import sys


def reply(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def read_request():
    line = sys.stdin.readline()
    if not line:
        return None
    return json.loads(line)


class Worker:
    def __init__(self, model_dir, max_new_tokens):
        import torch
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.torch = torch
        self.device = "cuda" if torch.cuda.is_available() else "cpu"
        self.tokenizer = AutoTokenizer.from_pretrained(model_dir)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_dir).to(self.device)
        self.max_new_tokens = max_new_tokens
        self.num_beams = 1

    def generate(self, inputs, batch_size=16):
        self.model.eval()
        outputs = []
        with self.torch.no_grad():
            for start in range(0, len(inputs), batch_size):
                chunk = inputs[start : start + batch_size]
                enc = self.tokenizer(chunk, return_tensors="pt", padding=True, truncation=True)
                enc = {k: v.to(self.device) for k, v in enc.items()}
                ids = self.model.generate(
                    **enc, max_new_tokens=self.max_new_tokens, num_beams=self.num_beams
                )
                outputs.extend(self.tokenizer.batch_decode(ids, skip_special_tokens=False))
        return outputs

    def register(self, tokens):
        self.tokenizer.add_special_tokens({"additional_special_tokens": tokens})
        self.model.resize_token_embeddings(len(self.tokenizer))
        return tokens

    def fine_tune(self, pairs, config, serve):
        torch = self.torch
        decoding = config.get("decoding", "greedy")
        if isinstance(decoding, dict) and "beam" in decoding:
            self.num_beams = int(decoding["beam"]["width"])
        random.seed(config.get("seed", 0))
        torch.manual_seed(config.get("seed", 0))
        lr = config.get("learning_rate", 5e-5)
        if config.get("optimizer", "adam") == "adamw":
            optim = torch.optim.AdamW(self.model.parameters(), lr=lr)
        else:
            optim = torch.optim.Adam(self.model.parameters(), lr=lr)
        batch_size = config.get("batch_size", 4)
        epochs = config.get("epochs", 7)
        order = list(range(len(pairs)))
        seen = 0
        loss_value = None
        for epoch in range(1, epochs + 1):
            self.model.train()
            random.shuffle(order)
            total, batches = 0.0, 0
            for start in range(0, len(order), batch_size):
                batch = [pairs[i] for i in order[start : start + batch_size]]
                enc = self.tokenizer(
                    [p["input"] for p in batch], return_tensors="pt", padding=True, truncation=True
                )
                labels = self.tokenizer(
                    [p["target"] for p in batch], return_tensors="pt", padding=True, truncation=True
                ).input_ids
                labels[labels == self.tokenizer.pad_token_id] = -100
                enc = {k: v.to(self.device) for k, v in enc.items()}
                out = self.model(**enc, labels=labels.to(self.device))
                out.loss.backward()
                optim.step()
                optim.zero_grad()
                total += out.loss.item()
                batches += 1
                seen += len(batch)
            loss_value = total / max(batches, 1)
            reply({"event": "epoch", "epoch": epoch, "loss": loss_value})
            serve(until_resume=True)
        reply({"event": "done", "epochs": epochs, "pairs_seen": seen, "loss": loss_value})


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", required=True)
    parser.add_argument("--max-new-tokens", type=int, default=256)
    args = parser.parse_args()
    worker = Worker(args.model, args.max_new_tokens)

    def serve(until_resume=False):
        while True:
            req = read_request()
            if req is None:
                sys.exit(0)
            op = req.get("op")
            try:
                if op == "resume" and until_resume:
                    return
                if op == "shutdown":
                    sys.exit(0)
                if op == "generate":
                    reply({"ok": True, "outputs": worker.generate(req["inputs"])})
                elif op == "register":
                    reply({"ok": True, "registered": worker.register(req["tokens"])})
                elif op == "fine_tune" and not until_resume:
                    worker.fine_tune(req["pairs"], req.get("config", {}), serve)
                else:
                    reply({"ok": False, "error": "unexpected op %r" % op})
            except Exception as e:  # reported to the caller, the worker keeps serving
                reply({"ok": False, "error": "%s: %s" % (type(e).__name__, e)})

    serve()


if __name__ == "__main__":
    main()
