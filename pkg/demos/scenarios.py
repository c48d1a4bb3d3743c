"""Run every bundled scenario and print its summary.

Equivalent to ``poh run <name>`` for each name, without writing files.
"""

import time

from poh.harness import bundled_scenarios, load_scenario, run_scenario
from poh.harness.runner import format_summary


def main() -> None:
    for name in bundled_scenarios():
        start = time.perf_counter()
        result = run_scenario(load_scenario(name))
        print(format_summary(result.report))
        print(f"  ({time.perf_counter() - start:.1f} s)\n")


if __name__ == "__main__":
    main()
