"""Why popular items dominate training.

Train plain matrix factorization for one epoch on a synthetic long-tail log,
then look at how large each item's gradient is and whether head and tail items
pull the shared user table in the same direction.
"""
import numpy as np

from icmt import InteractionDataset, TrainConfig, analyze_gradients, split_dataset, train
from icmt.synth import generate_zipf_interactions

pairs = generate_zipf_interactions(300, 400, zipf=1.2, seed=0)
split = split_dataset(InteractionDataset(300, 400, pairs), seed=0)
pop = np.bincount(split.train[:, 1], minlength=400)
print(f"{len(split.train)} training interactions, top 20% of items hold "
      f"{np.sort(pop)[::-1][:80].sum() / pop.sum():.0%} of them")

params, _ = train(TrainConfig(model_kind="pmf", method="normal", max_epochs=1, eval_every_batches=10**6), split)
rep = analyze_gradients(params, split, top_pairs=5, seed=0)

# gradient norm by popularity decile
norms = np.array(rep["grad_norm"])
for k, chunk in enumerate(np.array_split(norms, 10)):
    print(f"popularity decile {k}: mean item gradient norm {chunk.mean():.3f}")
print(f"spearman(popularity, gradient norm) = {rep['spearman']:.3f}")

# head and tail items disagree about the user table
for q in sorted(rep["pairs"], key=lambda q: q["cosine"])[:5]:
    print(f"head item {q['head']:3d} vs tail item {q['tail']:3d}: cosine {q['cosine']:+.3f}")
