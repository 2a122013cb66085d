import numpy as np
from fasterlab import datasets as D, trainer as TR
import fasterlab.trainer as trmod

spec = D.make_task('speed', slow_speed=1.0, fast_speed=1.5)
orig_build = trmod.build_backbone

def run(tag, lr, epochs, zinit, gen_seed, train_seed):
    train = D.generate(spec, 800, np.random.default_rng(gen_seed))
    test = D.generate(spec, 300, np.random.default_rng(gen_seed+1))
    def patched(cfg, seed=0, dtype=np.float32):
        net = orig_build(cfg, seed=seed, dtype=dtype)
        if zinit:
            for _, block in net.blocks:
                block.stages[-1].bn.gamma.data[:] = 0.0
        return net
    trmod.build_backbone = patched
    cfg = TR.TrainConfig(stage='backbone', epochs=epochs, batch_size=32, base_lr=lr,
                         family='r21d', num_classes=2, seed=train_seed)
    net, rows = TR.train_backbone(cfg, train)
    te = TR.evaluate_backbone_top1(net, test)
    trmod.build_backbone = orig_build
    print(f'{tag} gen={gen_seed} s={train_seed}: train {rows[-1].top1:.3f} test {te:.3f}', flush=True)

for gen_seed, train_seed in ((7,3),(99,5)):
    run('lr.01 zinit ep20', 0.01, 20, True, gen_seed, train_seed)
for gen_seed, train_seed in ((7,3),(99,5)):
    run('lr.005 ep25     ', 0.005, 25, False, gen_seed, train_seed)
