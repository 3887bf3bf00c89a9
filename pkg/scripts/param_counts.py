"""Parameter counts per model kind and group, at toy and at full-size dimensions.

    python3 scripts/param_counts.py
"""

from __future__ import annotations

from mmbt.baselines import MODEL_KINDS, model_shapes
from mmbt.encoders import ImageEncoderConfig
from mmbt.model import MMBTConfig, count_parameters
from mmbt.transformer import EncoderConfig

TOY = MMBTConfig(
    encoder=EncoderConfig(2, 32, 4, 64),
    image=ImageEncoderConfig(1, 8, 8, 2, 16, 2, 2),
    vocab_size=200,
    num_classes=2,
)
# BERT-base text side, 2048-d image features pooled to N=3, 23 labels
FULL = MMBTConfig(
    encoder=EncoderConfig(12, 768, 12, 3072),
    image=ImageEncoderConfig(3, 224, 224, 32, 2048, 1, 3),
    vocab_size=30522,
    num_classes=23,
    task_kind="multilabel",
    max_positions=512,
)


def show(name: str, config: MMBTConfig) -> None:
    print(f"== {name}")
    for kind in MODEL_KINDS:
        groups = count_parameters(model_shapes(kind, config), by_group=True)
        detail = " ".join(f"{g}={n}" for g, n in groups.items())
        print(f"{kind:13s} total={sum(groups.values()):>11d}  {detail}")
    mmbt = count_parameters(model_shapes("mmbt", config), by_group=True)
    concat = count_parameters(model_shapes("concat_bert1", config), by_group=True)
    diff = (mmbt["image_map"] + mmbt["head"]) - concat["head"]
    print(f"mmbt map+head minus concat_bert1 head: {diff}")


if __name__ == "__main__":
    show("toy", TOY)
    show("full", FULL)
