"""
Borrowing strength between tasks
================================

Task 1 is hidden on a window in the middle of the domain. A correlated
task 0 that is observed there carries the information across.
"""

import numpy as np

from mtgp.estimators import InnerOptConfig, default_params, gradient_fit
from mtgp.kernels import Dataset
from mtgp.posterior import PredictionRequest, predict, sample_predictions
from mtgp.synthetic import sample_dataset, two_task_params

truth = two_task_params(correlation=0.95, noise_variance=0.01)
full = sample_dataset(truth, 40, seed=5)
y = full.outputs.copy()
x = full.inputs[:, 0]
hidden = np.flatnonzero((x > 2.0) & (x < 3.5))
hidden = hidden[np.argsort(x[hidden])]
y[hidden, 1] = np.nan
ds = Dataset(full.inputs, y)

fit = gradient_fit(ds, default_params(ds), InnerOptConfig(num_restarts=3))
xq = full.inputs[hidden]
pred = predict(fit.params, ds, PredictionRequest(xq, np.ones(len(xq), dtype=int)))

# %%
# Held-out task 1 values against the prediction.
for x, held, mu, sd in zip(xq[:, 0], full.outputs[hidden, 1], pred.means, np.sqrt(pred.variances)):
    print(f"x={x:.2f}  held out {held:+.3f}  predicted {mu:+.3f} +/- {sd:.3f}")

# %%
draws = sample_predictions(pred, 3, seed=0)
print("three joint draws:\n", np.round(draws[:, :6], 3))
