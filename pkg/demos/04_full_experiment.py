"""Run the whole experiment sweep on a small synthetic dataset.

Thirty synthetic families under strong multiplicative illumination, all
four preprocessing variants, two feature counts.  Illumination cripples
the basic method here, Retinex restores most of the accuracy, and the
combination with the elliptical mask does best; the best-of table at the
bottom of the report shows the ordering.  Prints the aligned report and
leaves report.txt / report.csv under demos/output/experiment/.

Equivalent command line:

    kinverify run-all --config demo_config.json

with the JSON below saved to demo_config.json.  Takes a minute or two.
"""

import json
from pathlib import Path

from kinverify.pipeline import config_from_dict, run_all

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

config = {
    "dataset": {
        "synthetic": {
            "families": 30,
            "height": 200,
            "width": 200,
            "kin_noise": 0.25,
            "illum_strength": 0.9,
            "seed": 3,
            "out_dir": "experiment/data",
        }
    },
    "methods": ["basic", "retinex", "mask", "retinex+mask"],
    "features": {"n_scales": 6},
    "txqda": {"d": 190, "d_sweep": [150, 190]},
    "eval": {"k": 5, "seed": 42},
    "output_dir": "experiment",
}
print("config:")
print(json.dumps(config, indent=2))

result = run_all(config_from_dict(config), base_dir=out_dir, quiet=False)
print()
print(result.report_txt)
print(f"reports under {out_dir / 'experiment'}")
