"""
Can the eavesdropper tell what it is looking at?
================================================

Before attacking, an interceptor wants to know whether captured
activations betray their origin. Clustering per-channel means answers
three questions: do two different architectures separate (yes, sharply),
do two cut depths of one model separate (yes), and do the ten output
classes separate (no - which is exactly why a generative attack is
needed instead of simple label inference).
"""

from pathlib import Path

import numpy as np

from splitlab import datasets, feasibility, models, plots

out_dir = Path("demo_out/03_feasibility")
out_dir.mkdir(parents=True, exist_ok=True)

data = datasets.make_synthetic(1600, seed=11)
trainset, _ = data.split(1400)
images = trainset.images[:600]

tinynet = models.train_model(models.build_model("tinynet", 42), trainset,
                             epochs=3, seed=7)
tinydwnet = models.train_model(models.build_model("tinydwnet", 43), trainset,
                               epochs=3, seed=8)


def capture_features(model, cut, imgs, tag):
    part = models.partition(model, cut)
    acts = models.forward_head_batch(part, imgs)
    return feasibility.activation_features(acts, tag=tag)


# question 1: two architectures, same cut depth in spirit (both post-pool3)
feats_a = capture_features(tinynet, 9, images, "tinynet")
feats_b = capture_features(tinydwnet, 13, images, "tinydwnet")
study = feasibility.differentiability_study([(feats_a, "tinynet"),
                                             (feats_b, "tinydwnet")], seed=0)
print(f"model vs model : silhouette {study.silhouette:.3f}, "
      f"purity {study.purity:.3f}")

# question 2: one model, two cut depths (channel counts pooled to match)
feats_6 = capture_features(tinynet, 6, images, "cut6")
pooled6, pooled9 = feasibility.pool_to_common([feats_6, feats_a])
study_layers = feasibility.differentiability_study(
    [(pooled6, "cut6"), (pooled9, "cut9")], seed=0)
print(f"layer vs layer : silhouette {study_layers.silhouette:.3f}, "
      f"purity {study_layers.purity:.3f}")

# question 3: one model, one shallow cut, tagged by true class
part3 = models.partition(tinynet, 3)
acts3 = models.forward_head_batch(part3, trainset.images[:1000])
feats_3 = feasibility.activation_features(acts3)
labels = np.asarray(trainset.labels[:1000])
by_class = [(feasibility.FeatureMatrix(feats_3.rows[labels == k]),
             f"class_{k}") for k in range(10)]
study_class = feasibility.differentiability_study(by_class, seed=0)
print(f"class vs class : silhouette {study_class.silhouette:.3f}, "
      f"purity {study_class.purity:.3f} (chance is 0.1)")

# the elbow method agrees that the model-vs-model pool wants k = 2
pooled_rows = feasibility.FeatureMatrix(
    np.concatenate([feats_a.rows, feats_b.rows]))
curve = feasibility.inertia_curve(pooled_rows, 1, 7, seed=0)
print(f"elbow picks k = {feasibility.elbow_select(pooled_rows, 6, seed=0)}")
plots.plot_inertia_curve(curve, out_dir / "inertia.png")

# a 3-D principal-component scatter makes the separation visible
points = feasibility.project_3d(pooled_rows)
tags = np.array(["tinynet"] * len(feats_a.rows)
                + ["tinydwnet"] * len(feats_b.rows))
plots.plot_projection(points, tags, out_dir / "projection.png")
print(f"plots written under {out_dir}")
