"""Effect sizes from the kinds of statistics primary studies report."""

from livingmeta.effects import g_from_gains, g_from_posttest, g_from_statistic, hedges_correction, orient

# small-sample correction shrinks d toward zero, more so for small studies
for df in (10, 38, 98, 1000):
    print(f"J({df}) = {hedges_correction(df).J:.6f}")

# post-test means, half a pooled SD apart, 50 learners per arm
post = g_from_posttest(mean_t=0.5, mean_c=0.0, sd_t=1.0, sd_c=1.0, n_t=50, n_c=50)
print(f"\nposttest  g = {post.g:.6f}  var = {post.var_g:.6f}")

# gain scores: difference in gains over the pooled pre-test SD
gain = g_from_gains(pre_t=10, post_t=14, pre_c=10, post_c=12, sd_pre_t=4, sd_pre_c=4, n_t=30, n_c=30)
print(f"gains     g = {gain.g:.6f}  var = {gain.var_g:.6f}  (pre/post r = 0.7)")

# a reported t statistic, and the equivalent one-df F with its direction supplied
t = g_from_statistic(2.0, 50, 50)
f = g_from_statistic(4.0, 50, 50, kind="F", sign=+1)
print(f"from t    g = {t.g:.6f}")
print(f"from F    g = {f.g:.6f}")

# orientation: positive must mean "favours the AI condition"
reversed_study = g_from_posttest(10.0, 12.0, 3.0, 3.0, 25, 25)     # control arm listed first
print(f"\nraw {reversed_study.g:+.3f} -> oriented {orient(reversed_study, ai_arm_is_first=False).g:+.3f}")
