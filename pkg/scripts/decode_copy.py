"""Decode letter sequences with a trained toy copy checkpoint.

    python scripts/decode_copy.py --logdir /tmp/copy a b c d
"""

import argparse
import sys

import seqframe.model_imports  # noqa: F401
from seqframe.input_generator import VocabFileTokenizer
from seqframe.quant import export_inference
from seqframe.registry import get_model_params
from seqframe.runners import checkpoint as ckpt_lib


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--logdir", required=True)
    ap.add_argument("--model", default="toy.copy.CopyLstm")
    ap.add_argument("tokens", nargs="+")
    args = ap.parse_args(argv)
    path = ckpt_lib.latest_checkpoint(args.logdir)
    if path is None:
        print(f"no checkpoint in {args.logdir}", file=sys.stderr)
        return 1
    params = get_model_params(args.model, "Test")
    tok = VocabFileTokenizer(params.task.input.tokenizer)
    fn = export_inference(params, path)
    ids = tok.tokenize(" ".join(args.tokens), add_eos=True)
    print(tok.detokenize(fn(ids)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
