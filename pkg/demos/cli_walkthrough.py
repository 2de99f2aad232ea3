# # End-to-end with the command-line tool
#
# The library ships a `btabl` command. Here it is driven from Python so the
# whole flow fits in one script: write a synthetic data directory, train from
# a JSON config, evaluate on the test days and print a few report files.

import csv
import json
import tempfile
from pathlib import Path

from btabl.cli import main
from btabl.synthetic import write_planted_directory

work = Path(tempfile.mkdtemp(prefix="btabl_demo_"))

# %% [markdown]
# Two stocks, six days each, one text file per day in FI-2010 layout
# (144 features followed by 5 label columns per event).

# %%
data = write_planted_directory(work / "data", n_stocks=2, n_days=6, events_per_day=800, seed=3)
config = {"data_dir": str(data), "optimizer": "vogn", "epochs": 20, "test_days": 2,
          "vogn_momentum": 0.0, "vogn_h_decay": 1.0, "ns_test": 30, "seed": 3}
(work / "config.json").write_text(json.dumps(config, indent=1))

# %%
code = main(["train", "--config", str(work / "config.json"), "--out", str(work / "run")])
print("train exit code", code)
with open(work / "run" / "learning_curve.csv") as fh:
    rows = list(csv.DictReader(fh))
for r in rows[-2:]:
    print(r)

# %% [markdown]
# Evaluation writes one CSV per table or figure; nothing is plotted.

# %%
main(["evaluate", "--checkpoint", str(work / "run" / "checkpoint_best.json"), "--data", str(data),
      "--out", str(work / "report"), "--per-stock"])
for name in ("metrics_multiclass.csv", "auroc_ece_ecd.csv", "per_stock_metrics.csv"):
    print(f"\n== {name}")
    print((work / "report" / name).read_text())

# %%
main(["predict", "--checkpoint", str(work / "run" / "checkpoint_best.json"), "--data", str(data),
      "--ns", "30", "--out", str(work / "predictions.csv"), "--labeled"])
print("\n".join((work / "predictions.csv").read_text().splitlines()[:4]))
print("\noutputs under", work)
