import numpy as np
from fasterlab import datasets as D, trainer as TR

spec = D.make_task('speed', slow_speed=1.0, fast_speed=1.5)
for gen_seed, train_seed in ((42,1),(7,3),(99,5)):
    train = D.generate(spec, 800, np.random.default_rng(gen_seed))
    test = D.generate(spec, 300, np.random.default_rng(gen_seed+1))
    accs = {}
    for fam in ('r2d','r21d'):
        cfg = TR.TrainConfig(stage='backbone', epochs=25, batch_size=32, base_lr=0.005,
                             family=fam, num_classes=2, seed=train_seed)
        net, rows = TR.train_backbone(cfg, train)
        accs[fam] = (rows[-1].top1, TR.evaluate_backbone_top1(net, test))
    gap = accs['r21d'][1] - accs['r2d'][1]
    print(f'gen={gen_seed} s={train_seed}: r2d tr {accs["r2d"][0]:.3f} te {accs["r2d"][1]:.3f} | '
          f'r21d tr {accs["r21d"][0]:.3f} te {accs["r21d"][1]:.3f} | gap {gap*100:+.1f}', flush=True)
