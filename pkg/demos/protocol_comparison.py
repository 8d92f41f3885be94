"""Run the three protocols on one task and compare accuracy against bytes.

Parameter averaging ships whole models, distillation ships soft labels for
a shared public pool, and the compressed variant ships single-bit votes.
With a small model the label matrix is the expensive payload; the printed
table makes the trade explicit instead of assuming any one regime.
"""

from fedsoft import PartitionSpec, run_experiment
from fedsoft.config import DataConfig, ModelConfig, PoolConfig, RunConfig
from fedsoft.protocols import ProtocolConfig, Seeds, TrainSettings


def build(protocol):
    extra = {}
    if protocol == "cfd":
        extra = dict(b_up=1, b_down=1, init_mode="dual_distill")
    return RunConfig(
        data=DataConfig(
            kind="blobs",
            classes=10,
            dim=32,
            train_per_class=300,
            val_per_class=50,
            spread=1.5,
            seed=7,
        ),
        partition=PartitionSpec(num_clients=20, alpha=1.0, seed=0),
        pool=PoolConfig(size=5000, n_pub=5000, seed=13),
        model=ModelConfig(kind="mlp1", hidden_dim=64),
        protocol=ProtocolConfig(
            protocol=protocol,
            rounds=15,
            participation_rate=0.4,
            local_epochs=10,
            distill_epochs=10,
            seeds=Seeds(1, 2, 3),
            **extra,
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
    reports = {p: run_experiment(build(p)) for p in ("fa", "fd", "cfd")}
    print("per-round accuracy")
    print("round   fa     fd     cfd-1-1")
    for i in range(15):
        row = [reports[p].rounds[i].accuracy for p in ("fa", "fd", "cfd")]
        print(f"{i + 1:5d}  {row[0]:.3f}  {row[1]:.3f}  {row[2]:.3f}")
    print("\ncumulative upload bytes after 15 rounds")
    for p in ("fa", "fd", "cfd"):
        rec = reports[p].rounds[-1]
        label = "cfd-1-1" if p == "cfd" else p
        print(f"  {label:8s} {rec.cumulative_up_bytes:14,} B  final acc {rec.accuracy:.3f}")


if __name__ == "__main__":
    main()
