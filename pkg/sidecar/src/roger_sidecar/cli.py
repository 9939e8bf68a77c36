"""Command line entry: roger-sidecar --listen host:port."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoder import PromptPair
from .enhancer import Enhancer
from .server import serve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="roger-sidecar",
                                 description="Image enhancement service")
    ap.add_argument("--listen", default="127.0.0.1:7787", help="host:port")
    ap.add_argument("--device", choices=["cpu", "accelerator"], default="cpu",
                    help="compute device (this build is CPU-only)")
    ap.add_argument("--prompts", default=None,
                    help="comma-separated '<high>,<low>' prompt override")
    args = ap.parse_args(argv)

    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.device != "cpu":
        print("accelerator not available; running on cpu", file=sys.stderr)

    prompts = PromptPair()
    if args.prompts:
        parts = args.prompts.split(",", 1)
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            print("--prompts expects '<high>,<low>'", file=sys.stderr)
            return 2
        prompts = PromptPair(parts[0].strip(), parts[1].strip())

    serve(args.listen, Enhancer(prompts))
    return 0


if __name__ == "__main__":
    sys.exit(main())
