"""Regenerates the evaluation fixtures with scipy as the reference implementation.

Outputs:
  eval_predictions.csv  prediction table (row,col,split,target_lg,pred_lg)
  eval_oracle.json      metrics of the test split computed with scipy/numpy
  resid_pairs.csv       truth_lg,residual_lg pairs whose OLS slope is exactly -0.2
"""
import json
from pathlib import Path

import numpy as np
from scipy import stats

HERE = Path(__file__).resolve().parent
rng = np.random.default_rng(20240611)


def metrics(truth, pred):
    r = stats.pearsonr(truth, pred).statistic
    sse = np.sum((truth - pred) ** 2)
    sst = np.sum((truth - truth.mean()) ** 2)
    mioa = 1.0 - np.sum(np.abs(truth - pred)) / np.sum(
        np.abs(pred - truth.mean()) + np.abs(truth - truth.mean()))
    resid = pred - truth
    fit = stats.linregress(truth, resid)
    return {
        "m": int(truth.size),
        "r_squared": float(r * r),
        "coe": float(1.0 - sse / sst),
        "mioa": float(mioa),
        "mean_truth": float(truth.mean()),
        "bias": {
            "alpha": float(fit.intercept),
            "beta": float(fit.slope),
            "pearson_r": float(fit.rvalue),
            "p_value": float(fit.pvalue),
        },
    }


rows = []
splits = ["train"] * 60 + ["valid"] * 20 + ["test"] * 20
rng.shuffle(splits)
truth = np.round(np.log10(np.maximum(1.0, rng.gamma(0.6, 400.0, size=100))), 9)
pred = np.round(0.25 + 0.8 * truth + rng.normal(0.0, 0.3, size=100), 9)
with open(HERE / "eval_predictions.csv", "w") as f:
    f.write("row,col,split,target_lg,pred_lg\n")
    for i in range(100):
        f.write(f"{i // 10},{i % 10},{splits[i]},{float(truth[i])!r},{float(pred[i])!r}\n")

test = np.array([s == "test" for s in splits])
oracle = {"test": metrics(truth[test], pred[test]), "all": metrics(truth, pred)}
(HERE / "eval_oracle.json").write_text(json.dumps(oracle, indent=2) + "\n")

t = np.linspace(0.0, 4.0, 41)
noise = rng.normal(0.0, 0.15, size=t.size)
design = np.column_stack([np.ones_like(t), t])
noise -= design @ np.linalg.lstsq(design, noise, rcond=None)[0]  # orthogonal to [1, t]
resid = 0.4 - 0.2 * t + noise
with open(HERE / "resid_pairs.csv", "w") as f:
    f.write("truth_lg,residual_lg\n")
    for a, b in zip(t, resid):
        f.write(f"{float(a)!r},{float(b)!r}\n")
print("slope", stats.linregress(t, resid).slope)
