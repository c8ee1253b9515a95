"""Run every harness scenario and print what each attack ran into.

Run: python3 demos/attack_matrix.py [seed]
"""

import sys

from aegon.harness.scenarios import SCENARIOS, run_scenario


def main(seed: int = 0) -> int:
    failed = 0
    width = max(map(len, SCENARIOS))
    for name, spec in SCENARIOS.items():
        result = run_scenario(name, seed)
        failed += not result.passed
        mark = "ok " if result.passed else "BAD"
        print(f"{mark} {spec.kind:<12} {name:<{width}}  {result.observed}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else 0))
