#!/usr/bin/env python3
"""Regenerate the bundled model files under models/.

Each file is the exact table the generators in mcas.problems produce,
serialized with full precision so parse(emit(m)) reproduces the arrays
bit for bit. Run after touching mcas/problems.py:

    python3 scripts/emit_models.py [--out-dir models]
"""

import argparse
import os

from mcas.modelfile import emit_model
from mcas.problems import BenchmarkSpec, build_benchmark

# (spec, filename, parameter source note). Larger instances (dec-tiger
# n=4, meet-3x3 n=3) are generated on demand instead of bundled.
BUNDLED = (
    (BenchmarkSpec("dec-tiger", 2), "dec-tiger-n2.model",
     "two-agent tiger; Nair et al. 2003, listen accuracy 0.85"),
    (BenchmarkSpec("dec-tiger", 3), "dec-tiger-n3.model",
     "three-agent tiger; reward rule generalized per agent count"),
    (BenchmarkSpec("broadcast", 2), "broadcast-n2.model",
     "broadcast channel; Hansen et al. 2004, fill rates 0.9/0.1"),
    (BenchmarkSpec("broadcast", 3, frozenset({"DP", "WP"})), "broadcast-n3-dp-wp.model",
     "three-agent broadcast, fill rates 0.2/0.4/0.4, send penalty 0.1"),
    (BenchmarkSpec("meet-2x2", 2), "meet-2x2-n2.model",
     "meeting on a 2x2 grid; Bernstein et al. 2005, move noise 0.6/0.1"),
    (BenchmarkSpec("meet-2x2", 2, frozenset({"SS"})), "meet-2x2-n2-ss.model",
     "meeting on a 2x2 grid, same row/column starts"),
    (BenchmarkSpec("meet-3x3", 2), "meet-3x3-n2.model",
     "meeting on a 3x3 grid; Amato et al. 2009, corner goals"),
    (BenchmarkSpec("box-push", 2), "box-push-n2.model",
     "cooperative box pushing, compact 4-column form; Seuken & Zilberstein 2007"),
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default=os.path.join(
        os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "models"))
    args = parser.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    for spec, fname, note in BUNDLED:
        dec = build_benchmark(spec)
        quals = ",".join(sorted(spec.qualifiers)) or "none"
        text = emit_model(dec, header_comments=(
            f"{spec.name} with {spec.num_agents} agents (qualifiers: {quals})",
            note,
            "generated by scripts/emit_models.py; do not edit by hand",
        ))
        path = os.path.join(args.out_dir, fname)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"{path}: {dec.joint.num_states} states, "
              f"{dec.joint.num_actions} joint actions, {len(text.splitlines())} lines")


if __name__ == "__main__":
    main()
