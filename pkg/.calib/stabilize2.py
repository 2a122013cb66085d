import numpy as np
import fasterlab.backbones as B
from fasterlab import datasets as D, trainer as TR

orig_scaled = B._scaled
B._scaled = lambda c, s: max(orig_scaled(c, s), 4)

spec = D.make_task('speed', slow_speed=1.0, fast_speed=1.4)
for bs, ep, lr in ((16, 40, 0.005), (16, 40, 0.003)):
    for gen_seed, train_seed in ((7,3),(99,5),(42,1)):
        train = D.generate(spec, 800, np.random.default_rng(gen_seed))
        test = D.generate(spec, 300, np.random.default_rng(gen_seed+1))
        cfg = TR.TrainConfig(stage='backbone', epochs=ep, batch_size=bs, base_lr=lr,
                             family='r21d', num_classes=2, seed=train_seed)
        net, rows = TR.train_backbone(cfg, train)
        te = TR.evaluate_backbone_top1(net, test)
        print(f'bs={bs} ep={ep} lr={lr} gen={gen_seed} s={train_seed}: '
              f'r21d tr {rows[-1].top1:.3f} te {te:.3f}', flush=True)
# r2d reference under the widest budget
for gen_seed, train_seed in ((7,3),(99,5),(42,1)):
    train = D.generate(spec, 800, np.random.default_rng(gen_seed))
    test = D.generate(spec, 300, np.random.default_rng(gen_seed+1))
    cfg = TR.TrainConfig(stage='backbone', epochs=40, batch_size=16, base_lr=0.005,
                         family='r2d', num_classes=2, seed=train_seed)
    net, rows = TR.train_backbone(cfg, train)
    te = TR.evaluate_backbone_top1(net, test)
    print(f'R2D bs=16 ep=40 gen={gen_seed} s={train_seed}: tr {rows[-1].top1:.3f} te {te:.3f}', flush=True)
