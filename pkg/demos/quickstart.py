"""Minimal end-to-end tour: sample data, train a small mixture, inspect dispatch.

Runs in a few seconds at toy scale. For the full benchmark, see
specialization_sweep.py or the `moelab sweep` command.
"""

import dataclasses

from moelab import evaluate, format_dispatch_table, get_preset, make_datasets
from moelab.harness import run_experiment


def main():
    # Shrink the fast preset further so the demo stays interactive.
    base = get_preset("setting1_fast")
    cfg = dataclasses.replace(
        base,
        data=dataclasses.replace(base.data, n=2000),
        train=dataclasses.replace(base.train, T=600, eval_every=100),
        run=dataclasses.replace(base.run, n_test=2000),
    )

    print(f"training M={cfg.arch.M} cubic experts on d={cfg.data.d}, "
          f"K={cfg.data.K} clusters, n={cfg.data.n} examples")
    result = run_experiment(cfg, seed=0)

    print("\niteration trace (every 100 steps):")
    print("      t    loss   train    test   entropy")
    for log in result.logs:
        print(f"  {log.t:5d}  {log.loss:.4f}  {log.train_acc:.4f}  "
              f"{log.test_acc:.4f}  {log.entropy:.4f}")

    print("\ncluster-by-expert dispatch counts on the test set:")
    print(format_dispatch_table(result.report.dispatch))
    print(f"\ntest accuracy {result.report.accuracy:.4f}, "
          f"dispatch entropy {result.report.entropy:.4f} "
          "(0 means every cluster is owned by a single expert)")

    # The same report can be recomputed from any model and dataset directly.
    _, test_set, _ = make_datasets(cfg, seed=0)
    again = evaluate(result.model, test_set)
    assert again.accuracy == result.report.accuracy


if __name__ == "__main__":
    main()
