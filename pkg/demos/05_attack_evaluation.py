"""
Measuring the attack: accuracy, confidence, ASR across alpha
============================================================

A sweep replays a held-out labeled split through the attacked pipeline
at each interpolation strength and reports the three headline metrics.
The same machinery compares capture budgets (how much eavesdropping is
enough) and the two interpolation operators.
"""

from pathlib import Path

from splitlab import attack, channel, datasets, evaluation, models, plots, vae

out_dir = Path("demo_out/05_attack_evaluation")
out_dir.mkdir(parents=True, exist_ok=True)

data = datasets.make_synthetic(2300, seed=11)
trainset, testset = data.split(2000)
testset = testset.subset(range(200))

model = models.train_model(models.build_model("tinynet", 42), trainset,
                           epochs=6, seed=7, test_data=testset)
part = models.partition(model, 9)

heads = models.forward_head_batch(part, trainset.images[:1200])
captured = channel.EavesdropDataset(
    [models.ActivationTensor(h) for h in heads])
generator = vae.train_vae(
    captured, vae.VaeConfig(input_shape=captured.shape, epochs=20, seed=3))

# the main sweep: six attack strengths, clean-accuracy ASR baseline
alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
atk = attack.AttackConfig(interpolation="lerp", seed=123)
report = evaluation.sweep(part, generator, testset, alphas, atk)

print(f"clean split accuracy {report.clean_accuracy:.3f}, "
      f"reconstruction (alpha=0) accuracy {report.alpha0_accuracy:.3f}")
print("alpha  accuracy  confidence  asr     misclassified-confidence")
for p in report.points:
    mc = "-" if p.misclassified_confidence is None \
        else f"{p.misclassified_confidence:.3f}"
    print(f"{p.alpha:5.2f}  {p.accuracy:8.3f}  {p.mean_confidence:10.3f}  "
          f"{p.asr:6.2f}  {mc}")

# per-sample records and the report itself persist for later auditing
evaluation.write_report(report, out_dir / "report_lerp.json",
                        out_dir / "records_lerp.csv")

# paired operators: identical seeds and targets, only the blend differs
lerp_rep, slerp_rep = evaluation.interpolation_study(
    part, generator, testset, alphas, seed=123)
print("\nASR by alpha      " + "  ".join(f"{a:5.2f}" for a in alphas))
print("lerp             " + "  ".join(f"{p.asr:5.1f}"
                                      for p in lerp_rep.points))
print("slerp            " + "  ".join(f"{p.asr:5.1f}"
                                      for p in slerp_rep.points))

plots.plot_metric_curves([("lerp", lerp_rep), ("slerp", slerp_rep)], out_dir)
print(f"\ncurves written under {out_dir}")

# budget study: does more eavesdropping buy a better forgery?
budgets = [200, 600, 1200]
results = evaluation.budget_study(
    part, captured, testset, budgets,
    vae.VaeConfig(input_shape=captured.shape, epochs=12, seed=3),
    attack.AttackConfig(interpolation="lerp", seed=123))
print("\nbudget  misclassified-confidence at alpha=1")
for budget, rep in results:
    print(f"{budget:6d}  {rep.points[-1].misclassified_confidence:.4f}")
