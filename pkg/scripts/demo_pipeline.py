#!/usr/bin/env python3
"""End-to-end demo: build a sample dataset, perturb it, and print the fidelity report.

Writes everything under ./demo_out (created if needed). The PII key comes
from PRIVTAB_PII_KEY when set; otherwise a demo key file is written locally.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

from make_sample_data import build_sample_table

from privtab.cli import main as privtab_main
from privtab.table import write_csv

DEMO_CONFIG = {
    "version": 1,
    "seed": 20260808,
    "strict": True,
    "budget": {"epsilon": 2.0, "delta": 1e-5},
    "columns": {
        "income": [
            {"technique": "clip", "derivation": "mean_pm_3sigma"},
            {"technique": "multiplicative", "lo": 0.8, "hi": 1.2},
        ],
        "credit_score": [
            {"technique": "dp_laplace", "sensitivity": 1.0, "epsilon": 1.0},
        ],
        "age": [
            {
                "technique": "bin",
                "edges": [18, 30, 40, 50, 60, 70, 91],
                "labels": ["18-29", "30-39", "40-49", "50-59", "60-69", "70+"],
            }
        ],
        "account_balance": [
            {"technique": "dp_gaussian", "sensitivity": 1.0, "epsilon": 1.0, "delta": 1e-5},
        ],
        "full_name": [{"technique": "pii", "mode": "consistent"}],
        "phone": [{"technique": "pii", "mode": "consistent"}],
        "email": [{"technique": "pii", "mode": "consistent"}],
    },
    "thresholds": {"credit_score": 720},
}


def main() -> int:
    out_dir = Path("demo_out")
    out_dir.mkdir(exist_ok=True)
    sample = out_dir / "sample.csv"
    config_path = out_dir / "perturb_config.json"
    output = out_dir / "perturbed.csv"

    write_csv(build_sample_table(rows=2000, seed=20260808), sample)
    config_path.write_text(json.dumps(DEMO_CONFIG, indent=2), encoding="utf-8")

    args = [
        "perturb",
        "--config", str(config_path),
        "--input", str(sample),
        "--output", str(output),
    ]
    if not os.environ.get("PRIVTAB_PII_KEY"):
        key_file = out_dir / "demo.key"
        key_file.write_text("demo-secret-key\n", encoding="utf-8")
        args += ["--key-file", str(key_file)]

    code = privtab_main(args)
    if code != 0:
        return code
    print()
    return privtab_main(
        [
            "report",
            "--original", str(sample),
            "--processed", str(output),
            "--manifest", str(output) + ".manifest.json",
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
