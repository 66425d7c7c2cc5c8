"""Probe a synthetic KG embedding for gender and occupation, then filter gender out.

    python3 demos/kg_debias.py --kind transH --seed 0
"""

import argparse
import logging

from kgdebias.datagen import SyntheticKgSpec, gen_kg, leak_oracle_accuracy
from kgdebias.fan import FanTrainConfig
from kgdebias.graph import remove_relation
from kgdebias.kge import KgeTrainConfig, train_kge
from kgdebias.pipeline import attribute_audit, debias


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--kind", default="transH", choices=["transE", "transH", "transD"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--persons", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.5, 0.05])
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    kg, gender, occupation = gen_kg(SyntheticKgSpec(n_persons=args.persons, pool_size=1, seed=args.seed))
    print(f"count oracle, gender from graph structure: {leak_oracle_accuracy(kg, gender):.3f}")
    kg = remove_relation(kg, "hasGender")
    model, _ = train_kge(kg, args.kind, KgeTrainConfig(dim=50, epochs=args.epochs, seed=args.seed))

    g, g_report = attribute_audit(model.entity, gender, degrees=kg.entity_degree)
    o, _ = attribute_audit(model.entity, occupation)
    print(f"{'variant':<12}{'gender':>8}{'occupation':>12}")
    print(f"{'unfiltered':<12}{g.accuracy:>8.3f}{o.accuracy:>12.3f}")
    for lam in args.lambdas:
        filtered, _, _ = debias(model.entity, gender, lam, FanTrainConfig(seed=args.seed))
        fg, _ = attribute_audit(filtered, gender)
        fo, _ = attribute_audit(filtered, occupation)
        print(f"{'lambda ' + format(lam, 'g'):<12}{fg.accuracy:>8.3f}{fo.accuracy:>12.3f}")
    print("unfiltered gender accuracy by degree:")
    for lo, hi, n, acc, _, _ in g_report.bins:
        print(f"  degree {lo:>3}-{hi:<3} n={n:<5} acc={acc:.3f}")


if __name__ == "__main__":
    main()
