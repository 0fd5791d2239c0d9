"""
Guidance ramp
=============

The guidance scale starts at 1 and rises to alpha_cfg over the sampling
loop along a cosine curve; beta_scale bends the curve.
"""

from itamdt.sampler import CfgConfig, cfg_scale, make_schedule

steps = 30
sched = make_schedule()
timesteps = sched.sampling_steps(steps)
for beta in (0.5, 1.0, 2.0):
    cfg = CfgConfig(alpha_cfg=2.0, beta_scale=beta, steps=steps)
    ramp = [cfg_scale(steps - 1 - i, cfg) for i in range(steps)]
    print(f"beta_scale={beta}: " + " ".join(f"{a:.2f}" for a in ramp[::3]) + f" ... {ramp[-1]:.2f}")

print("diffusion timesteps visited:", timesteps[:4], "...", timesteps[-3:])
print("alpha_bar at first and last:", round(float(sched.alphas_cumprod[timesteps[0]]), 5),
      round(float(sched.alphas_cumprod[0]), 5))
