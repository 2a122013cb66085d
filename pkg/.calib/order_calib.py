import time, numpy as np
from fasterlab import datasets as D, trainer as TR

t0 = time.time()
spec = D.make_task('order')
train = D.generate(spec, 600, np.random.default_rng(100))
test = D.generate(spec, 300, np.random.default_rng(101))
print(f'gen {time.time()-t0:.0f}s', flush=True)

nets = {}
for fam, seed in (('r21d', 21), ('r2d', 22)):
    t0 = time.time()
    cfg = TR.TrainConfig(stage='backbone', family=fam, num_classes=2, seed=seed,
                         epochs=6, batch_size=32, base_lr=0.005)
    nets[fam], rows = TR.train_backbone(cfg, train)
    print(f'stage1 {fam}: {time.time()-t0:.0f}s train-acc {rows[-1].top1:.3f} '
          f'(chance-level is expected)', flush=True)

cache = TR.FeatureCache(enabled=True)
for method in ('fast-gru', 'gru', 'avg-pool'):
    for lr in (0.01, 0.02, 0.05):
        t0 = time.time()
        cfg = TR.TrainConfig(stage='aggregator', method=method, num_classes=2,
                             seed=31, epochs=12, batch_size=32, base_lr=lr,
                             clip_len=8, num_clips=16, pattern='1:7',
                             feature_cache=True)
        model, rows = TR.train_aggregator(cfg, nets['r21d'], nets['r2d'], train,
                                          shared_cache=cache)
        acc = TR.evaluate_topk(model, test, shared_cache=cache)
        print(f'{method} lr={lr}: {time.time()-t0:.0f}s '
              f'train-acc {rows[-1].top1:.3f} test {acc:.3f} '
              f'loss0 {rows[0].loss:.3f} lossN {rows[-1].loss:.3f}', flush=True)
