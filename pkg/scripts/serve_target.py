#!/usr/bin/env python3
"""Run the reference blog-post service in the foreground.

Useful for poking at the planted bug by hand:

    python scripts/serve_target.py --port 8888
    restfuzz fuzz --spec src/restfuzz/specs/blog_posts.yaml \
        --target 127.0.0.1:8888 --strategy bfs --max-length 3 --out out/
"""

import sys

from restfuzz.blogserver import main

if __name__ == "__main__":
    sys.exit(main())
