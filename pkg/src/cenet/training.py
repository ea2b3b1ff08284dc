"""Training loop: sample, forward, L1 loss, backward, Adam step.

A run is fully determined by its config: the parameter init is seeded,
every sampled patch depends only on (seed, iteration, sample), and
checkpoints capture parameters plus optimizer state bit-exactly, so a
resumed run reproduces the loss sequence of an uninterrupted one.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

from .blocks import EnhancementNetwork
from .checkpoint import Checkpoint, apply_to_network, load, save
from .config import RunConfig, format_config
from .dataset import SampleStream, scan_dataset
from .optim import Adam
from .tensor import ContractError, Tape, Tensor, backward, l1_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted; the message names the failing iteration."""


@dataclass
class TrainResult:
    final_checkpoint: Path
    iterations: int
    loss_rows: list[tuple[int, float, float]]


def snapshot(network: EnhancementNetwork, optimizer: Adam | None,
             iteration: int) -> Checkpoint:
    tensors = {name: p.data for name, p in network.named_parameters().items()}
    if optimizer is None:
        return Checkpoint(iteration, tensors)
    return Checkpoint(iteration, tensors,
                      optimizer_step=optimizer.step_count,
                      optimizer_tensors=optimizer.state_tensors())


def restore(ckpt: Checkpoint, network: EnhancementNetwork,
            optimizer: Adam | None = None):
    apply_to_network(ckpt, network)
    if optimizer is not None and ckpt.has_optimizer_state:
        optimizer.load_state_tensors(ckpt.optimizer_tensors, ckpt.optimizer_step)


def _save_checkpoint(path: Path, network, optimizer, iteration, config):
    save(snapshot(network, optimizer, iteration), path)
    Path(f"{path}.cfg").write_text(format_config(config))


def train(config: RunConfig, resume=None, echo=None) -> TrainResult:
    """Run (or continue) a training run; returns the final checkpoint path."""
    config.validate()
    data_root = Path(config.data_root)
    if not data_root.is_dir():
        raise TrainingError(f"data_root {data_root} is not a directory")
    records = scan_dataset(data_root)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    network = EnhancementNetwork(config.network, seed=config.seed)
    optimizer = Adam()
    start = 0
    if resume is not None:
        ckpt = load(resume)
        restore(ckpt, network, optimizer)
        start = ckpt.iteration
        if start >= config.schedule.total_iters:
            raise TrainingError(
                f"checkpoint is already at iteration {start} of {config.schedule.total_iters}")

    stream = SampleStream(records, config.augment, config.seed,
                          batch_size=config.batch_size, workers=config.workers)
    total = config.schedule.total_iters
    loss_path = out_dir / "loss_log.csv"
    mode = "a" if (resume is not None and loss_path.exists()) else "w"
    loss_rows: list[tuple[int, float, float]] = []

    with open(loss_path, mode) as loss_file:
        if mode == "w":
            loss_file.write("iteration,lr,loss\n")
        params = network.parameters()
        for i, (inputs, targets) in zip(range(start, total), stream.batches(start, total)):
            lr = config.schedule.lr_at(i)
            try:
                with Tape():
                    out = network.forward(Tensor(inputs))
                    loss = l1_loss(out, Tensor(targets))
                    backward(loss)
            except ContractError as exc:
                raise TrainingError(f"aborted at iteration {i}: {exc}") from exc
            loss_value = loss.item()
            if loss_value != loss_value:
                raise TrainingError(f"aborted at iteration {i}: loss is NaN")
            optimizer.step(params, lr)
            done = i + 1
            if done % config.log_every == 0 or done == total:
                row = (done, lr, loss_value)
                loss_rows.append(row)
                loss_file.write(f"{done},{lr:.10g},{loss_value:.9e}\n")
                loss_file.flush()
                if echo is not None:
                    echo(f"iter {done}/{total}  lr {lr:.3g}  loss {loss_value:.6f}")
            if done % config.checkpoint_every == 0 and done != total:
                _save_checkpoint(out_dir / f"checkpoint_{done:08d}.ckpt",
                                 network, optimizer, done, config)

    final_path = out_dir / "checkpoint_final.ckpt"
    _save_checkpoint(final_path, network, optimizer, total, config)
    return TrainResult(final_path, total, loss_rows)
