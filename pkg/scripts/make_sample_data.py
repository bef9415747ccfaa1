#!/usr/bin/env python3
"""Generate the bundled synthetic banking-style sample dataset.

Ten columns (ids, demographics, account numerics, names, phones, emails),
fully deterministic for a given seed so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse

import numpy as np

from privtab.pii import default_name_lists
from privtab.rng import RandomSource
from privtab.table import Column, ColumnKind, ColumnSchema, Table, write_csv


def build_sample_table(rows: int, seed: int) -> Table:
    first_names, last_names = default_name_lists()
    # modest pools so names repeat (exercises consistent-mode substitution)
    first_pool = first_names[:120]
    last_pool = last_names[:120]

    src = RandomSource(seed, 0)
    age = np.clip(np.round(src.standard_normal(rows) * 14 + 45), 18, 90)
    income = np.round(np.exp(src.standard_normal(rows) * 0.5 + 10.8), 2)
    credit = np.clip(np.round(src.standard_normal(rows) * 90 + 690), 300, 850)
    balance = np.round(src.standard_normal(rows) * 4000 + 2500, 2)
    tenure = np.round(src.uniform01(rows) * 40, 1)

    pick = RandomSource(seed, 1)
    account_types = ["checking", "savings", "premium", "business"]
    type_idx = pick.integers(0, len(account_types), rows)
    fn_idx = pick.integers(0, len(first_pool), rows)
    ln_idx = pick.integers(0, len(last_pool), rows)
    phone_digits = pick.integers(0, 10, rows * 7)
    area = pick.integers(200, 990, rows)
    email_num = pick.integers(1, 100, rows)
    missing_income = pick.uniform01(rows) < 0.01

    names = []
    phones = []
    emails = []
    for i in range(rows):
        first = first_pool[int(fn_idx[i])]
        last = last_pool[int(ln_idx[i])]
        names.append(f"{first.capitalize()} {last.capitalize()}")
        d = phone_digits[i * 7:(i + 1) * 7]
        phones.append(f"{area[i]}.{d[0]}{d[1]}{d[2]}.{d[3]}{d[4]}{d[5]}{d[6]}")
        emails.append(f"{first}.{last}{email_num[i]}@example.com")

    def numeric(name, values, missing_mask=None):
        cells = []
        for i, v in enumerate(values):
            if missing_mask is not None and missing_mask[i]:
                cells.append(None)
            else:
                cells.append(float(v))
        return Column(ColumnSchema(name, ColumnKind.NUMERIC), cells)

    def text(name, values, sensitivity=""):
        return Column(ColumnSchema(name, ColumnKind.TEXT, sensitivity), list(values))

    return Table(
        [
            numeric("customer_id", np.arange(1, rows + 1, dtype=float)),
            numeric("age", age),
            numeric("income", income, missing_income),
            numeric("credit_score", credit),
            numeric("account_balance", balance),
            numeric("tenure_years", tenure),
            text("account_type", [account_types[int(i)] for i in type_idx]),
            text("full_name", names, sensitivity="pii"),
            text("phone", phones, sensitivity="pii"),
            text("email", emails, sensitivity="pii"),
        ]
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=20260808)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    table = build_sample_table(args.rows, args.seed)
    write_csv(table, args.out)
    print(f"wrote {args.out}: {table.row_count} rows x {len(table.columns)} columns")


if __name__ == "__main__":
    main()
