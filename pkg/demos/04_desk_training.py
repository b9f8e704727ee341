"""
Desk-scale training
===================

Trains a full-width model on synthetic pairs and reports held-out PSNR/SSIM
against the degraded inputs. The full desk recipe (200 pairs, 4 epochs)
takes several minutes on one CPU core; pass ``--quick`` for a short run.
"""

import dataclasses
import sys
import time

from esdnet.desk import DESK_LOSS, DESK_MODEL, DESK_TRAIN, held_out_data
from esdnet.io import save_weights, write_csv
from esdnet.model import build_model
from esdnet.synth import gen_dataset
from esdnet.train import LOG_FIELDS, evaluate, train

quick = "--quick" in sys.argv
n_train = 20 if quick else 200
epochs = 1 if quick else DESK_TRAIN.total_epochs

train_pairs = [d[:2] for d in gen_dataset(n_train, 64, 64, seed=0)]
held_out = held_out_data()

model = build_model(DESK_MODEL, seed=0)
cfg = dataclasses.replace(DESK_TRAIN, total_epochs=epochs)

t0 = time.time()
model, log = train(model, train_pairs, cfg, DESK_LOSS,
                   callback=lambda r: r["step"] % 50 == 0 and print(f"step {r['step']:4d} loss {r['loss']:.4f}"))
print("trained %d steps in %.0fs" % (len(log), time.time() - t0))

report = evaluate(model, held_out)
print("held-out PSNR %.2f dB (input %.2f), SSIM %.3f (input %.3f)"
      % (report["psnr"], report["input_psnr"], report["ssim"], report["input_ssim"]))

save_weights(model, "desk.esdw")
write_csv(log, "desk.loss.csv", LOG_FIELDS)
