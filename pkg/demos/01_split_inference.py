"""
Split inference: one CNN, two machines, identical answers
=========================================================

A small CNN is cut at a chosen layer. Everything up to the cut runs on
the "device"; the rest runs on the "server". The activation tensor that
crosses the boundary is all the server ever sees, and the composed
pipeline must agree with running the whole model in one place.
"""

import numpy as np

from splitlab import datasets, models

# a quick synthetic task: 10 classes of oriented gratings, 32x32 RGB
data = datasets.make_synthetic(2400, seed=0)
trainset, testset = data.split(2000)

# train the registered desk-scale CNN for a few epochs
model = models.build_model("tinynet", seed=1)
model = models.train_model(model, trainset, epochs=5, seed=2,
                           test_data=testset)
print(f"test accuracy after 5 epochs: {model.baseline_accuracy:.3f}")

# the layer table shows where a cut can go (1 .. L-1)
for spec in model.layers:
    print(f"  layer {spec.index:2d}  {spec.name:<10s} -> {spec.output_shape}")

# cut after layer 9 (the third pooling stage)
part = models.partition(model, 9)
print(f"cut at {part.cut_index}: device sends tensors shaped {part.cut_shape}")

# device side computes the head, server side finishes from the tensor
x = testset.images[0]
h = models.forward_head(part, x)
split_result = models.forward_tail(part, h)
full_result = models.forward_full(model, x)

print(f"full model prediction : {full_result.predicted_class} "
      f"(confidence {full_result.confidence:.4f})")
print(f"split pipeline says   : {split_result.predicted_class} "
      f"(confidence {split_result.confidence:.4f})")

# the contract: split and full inference agree within 1e-5 on every probability
gap = np.abs(split_result.full_distribution
             - full_result.full_distribution).max()
print(f"max probability difference across all classes: {gap:.2e}")
assert gap <= 1e-5
