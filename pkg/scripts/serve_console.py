#!/usr/bin/env python3
"""Start the live session service for the browser console.

Serve the frontend separately (see frontend/README notes) or point any
WebSocket client at ws://HOST:PORT/stream.
"""

import argparse

from bcigrasp.harness import default_config
from bcigrasp.service import serve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"session service on http://{args.host}:{args.port} "
          f"(stream at /stream, state at /state)")
    serve(default_config(3, seed=args.seed), port=args.port, host=args.host)


if __name__ == "__main__":
    main()
