"""Regenerate tests/golden from the shipped scenarios.

Run after an intentional change to the simulation or log format:
    python tests/make_golden.py
"""

import json
from pathlib import Path

from ifvf.runtime.execution import run_scenario
from ifvf.runtime.logs import write_log_text
from ifvf.runtime.scenario import load_scenario, shipped_scenarios

OUT = Path(__file__).parent / "golden"


def main():
    OUT.mkdir(exist_ok=True)
    (OUT / "coffee.config.json").write_text(json.dumps(load_scenario("coffee").data, indent=1, sort_keys=True) + "\n")
    for path in shipped_scenarios():
        result = run_scenario(load_scenario(path))
        write_log_text(OUT / f"{path.stem}.log.gz", result.log_text)
        print(f"{path.stem}: {result.status}, {len(result.log_text.splitlines())} lines")


if __name__ == "__main__":
    main()
