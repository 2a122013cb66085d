import numpy as np
import fasterlab.backbones as B
from fasterlab import datasets as D, trainer as TR

orig_scaled = B._scaled
def patched_floor(floor):
    def f(c, s):
        return max(orig_scaled(c, s), floor)
    return f

for floor in (4, 6):
    B._scaled = patched_floor(floor)
    for slow, fast in ((1.0, 1.5), (1.0, 1.4)):
        spec = D.make_task('speed', slow_speed=slow, fast_speed=fast)
        for gen_seed, train_seed in ((42,1),(7,3),(99,5),(11,8)):
            train = D.generate(spec, 800, np.random.default_rng(gen_seed))
            test = D.generate(spec, 300, np.random.default_rng(gen_seed+1))
            cfg = TR.TrainConfig(stage='backbone', epochs=25, batch_size=32, base_lr=0.005,
                                 family='r21d', num_classes=2, seed=train_seed)
            net, rows = TR.train_backbone(cfg, train)
            te = TR.evaluate_backbone_top1(net, test)
            print(f'floor={floor} {slow}/{fast} gen={gen_seed} s={train_seed}: '
                  f'r21d tr {rows[-1].top1:.3f} te {te:.3f}', flush=True)
B._scaled = orig_scaled
