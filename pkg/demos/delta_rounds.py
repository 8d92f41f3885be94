"""Watch per-round upload entropy collapse once predictions stabilize.

Runs the single-bit compressed protocol twice on the same data, with and
without delta coding, and prints the per-round upload cost of each.  Late
rounds repeat most votes, so the delta stream is nearly all zeros and the
range coder squeezes it toward nothing.
"""

from fedsoft import PartitionSpec, run_experiment
from fedsoft.config import DataConfig, ModelConfig, PoolConfig, RunConfig
from fedsoft.protocols import ProtocolConfig, Seeds, TrainSettings


def build(delta):
    return RunConfig(
        data=DataConfig(
            kind="blobs",
            classes=10,
            dim=32,
            train_per_class=200,
            val_per_class=50,
            spread=1.0,
            seed=7,
        ),
        partition=PartitionSpec(num_clients=20, alpha=1.0, seed=0),
        pool=PoolConfig(size=2500, n_pub=2000, seed=13),
        model=ModelConfig(kind="softmax_regression"),
        protocol=ProtocolConfig(
            protocol="cfd",
            rounds=20,
            participation_rate=1.0,
            b_up=1,
            b_down=1,
            delta_coding=delta,
            local_epochs=5,
            distill_epochs=5,
            init_mode="previous",
            seeds=Seeds(1, 2, 3),
        ),
        train=TrainSettings(
            local_optimizer="sgd",
            local_lr=0.01,
            local_momentum=0.9,
            distill_optimizer="adam",
            distill_lr=1e-3,
            batch_size=32,
        ),
    )


def main():
    plain = run_experiment(build(delta=False))
    coded = run_experiment(build(delta=True))
    print("round  acc    up B (plain)  up B (delta)  delta H bits")
    for p, d in zip(plain.rounds, coded.rounds):
        print(
            f"{d.round:5d}  {d.accuracy:.3f}  {p.up_bytes:12,}  "
            f"{d.up_bytes:12,}  {d.up_entropy_bits:12.3f}"
        )
    print(
        f"\ncumulative upload: plain {plain.rounds[-1].cumulative_up_bytes:,} B, "
        f"delta {coded.rounds[-1].cumulative_up_bytes:,} B"
    )


if __name__ == "__main__":
    main()
