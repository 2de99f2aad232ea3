# # Reading a predictive distribution
#
# A Bayesian network does not return one probability vector per input. Every
# posterior draw gives its own vector, and the spread across draws is the
# model's uncertainty. This script trains a small VOGN model on planted data
# and then inspects the draws for a few inputs.

import numpy as np

from btabl.bayes import PosteriorPredictor, PredictiveSet, predictive_sets, rank_statistics, summarize
from btabl.config import RunConfig
from btabl.lobdata import stack_windows
from btabl.synthetic import planted_benchmark
from btabl.training import fit, network_shape

# %%
train, test = planted_benchmark(n_train=3000, n_test=400, seed=1)
Xtr, ytr = stack_windows(train)
Xte, yte = stack_windows(test)
cfg = RunConfig(optimizer="vogn", epochs=15, vogn_momentum=0.0, vogn_h_decay=1.0, seed=1).validate()
net = network_shape(cfg)
state = fit(cfg, net, (Xtr, ytr)).state

# %% [markdown]
# Fifty draws per input. Draw k uses the same sampled network for every
# input, so the columns of the array are fifty complete networks.

# %%
probs = predictive_sets(PosteriorPredictor(net, state), Xte, 50, seed=7)
print("array shape (inputs, draws, classes):", probs.shape)

names = ("stationary", "up", "down")
sets = [PredictiveSet(p, i, int(t)) for i, (p, t) in enumerate(zip(probs, yte))]
summaries = [summarize(s) for s in sets]
gaps = np.array([s.rank_gap for s in summaries])
for i in (int(gaps.argmax()), int(gaps.argmin())):
    s = summaries[i]
    print(f"\ninput {i}: true={names[s.true_label]} predicted={names[s.predicted_class]}")
    print("  mean probabilities", np.round(s.mean_probs, 3))
    print("  votes per class   ", s.label_counts.tolist(), "-> modal", names[s.modal_label])

# %% [markdown]
# When the model is right it tends to be more decided: the top-ranked
# probability is higher and the gap to the runner-up is wider. The rank
# statistics split the test set by outcome and summarize both quantities.

# %%
stats = rank_statistics(summaries)
for part in ("correct", "misclassified"):
    if stats[part] is None:
        print(part, "(empty)")
        continue
    p1, p2, p3, gap = stats[part]["mean"]
    print(f"{part:14s} mean p1 {p1:.3f}  p2 {p2:.3f}  p3 {p3:.3f}  gap {gap:.3f}")
