"""Discovering a rotation generator from fixed-angle image pairs.

Random 7x7 images and their copies rotated by pi/10 define an exactly
realizable linear regression (I + L) f = R f.  A single layer trained
with Adam recovers L; the least-squares solve on the same data provides
an independent oracle for both the optimum and the learned matrix.

Runs a reduced-size version (5k samples, 10 epochs, ~2 s); the full
50k/20-epoch configuration lives in the acceptance suite.
"""

from lconv.discovery import FixedAngleTask, OptimizerConfig, train_fixed_angle

task = FixedAngleTask(n_train=5000, n_test=1000, seed=0)
opt = OptimizerConfig(kind="adam", lr=1e-2, batch_size=64, epochs=10)
report = train_fixed_angle(task, opt)

print("epoch  train MSE   test MSE")
for epoch, train_mse, test_mse in report.loss_curve[::3]:
    print(f"{epoch:5d}  {train_mse:9.2e}  {test_mse:9.2e}")
print(f"final test MSE              : {report.final_test_mse:.2e}")
print(f"corr vs least-squares oracle: {report.correlations['vs_ls_oracle']:+.4f}")
print(f"corr vs exact R - I         : {report.correlations['vs_exact_rotation']:+.4f}")
print(f"corr vs analytic generator  : "
      f"{report.correlations['vs_sw_rotation_generator']:+.4f}"
      "   (one-step transport differs from the band-limited generator)")
