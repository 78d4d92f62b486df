"""Symbol tables mapping label strings to integer ids.

Id 0 is reserved for epsilon and id 1 for the blank emission symbol.
Ordinary labels start at id 2.
"""

from __future__ import annotations

EPSILON = 0
BLANK = 1

EPSILON_SYM = "<eps>"
BLANK_SYM = "<blk>"


class SymbolTable:
    """Bidirectional symbol <-> id map with the reserved ids pre-registered."""

    def __init__(self):
        self._sym_to_id: dict[str, int] = {EPSILON_SYM: EPSILON, BLANK_SYM: BLANK}
        self._id_to_sym: dict[int, str] = {EPSILON: EPSILON_SYM, BLANK: BLANK_SYM}

    @classmethod
    def for_alphabet(cls, symbols) -> "SymbolTable":
        """Table with the given label symbols registered in order from id 2."""
        table = cls()
        for sym in symbols:
            table.add(sym)
        return table

    @classmethod
    def for_size(cls, k: int) -> "SymbolTable":
        """Table with k generated labels: 'a', 'b', ... then 'l26', 'l27', ..."""
        return cls.for_alphabet(default_label_names(k))

    def add(self, sym: str) -> int:
        if sym in self._sym_to_id:
            return self._sym_to_id[sym]
        new_id = max(self._id_to_sym) + 1
        self._sym_to_id[sym] = new_id
        self._id_to_sym[new_id] = sym
        return new_id

    def id_of(self, sym: str) -> int:
        try:
            return self._sym_to_id[sym]
        except KeyError:
            raise KeyError(f"unknown symbol {sym!r}") from None

    def sym_of(self, label_id: int) -> str:
        try:
            return self._id_to_sym[label_id]
        except KeyError:
            raise KeyError(f"unknown label id {label_id}") from None

    def __contains__(self, sym: str) -> bool:
        return sym in self._sym_to_id

    def __len__(self) -> int:
        return len(self._sym_to_id)

    @property
    def label_ids(self) -> tuple[int, ...]:
        """Ids of ordinary labels (excludes epsilon and blank), ascending."""
        return tuple(sorted(i for i in self._id_to_sym if i >= 2))

    @property
    def label_syms(self) -> tuple[str, ...]:
        return tuple(self._id_to_sym[i] for i in self.label_ids)

    def to_text(self) -> str:
        lines = [f"{self._id_to_sym[i]} {i}" for i in sorted(self._id_to_sym)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SymbolTable":
        table = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"symbol table line {lineno}: expected 'symbol id', got {raw!r}")
            sym, id_str = parts
            label_id = int(id_str)
            if sym in (EPSILON_SYM, BLANK_SYM):
                expected = EPSILON if sym == EPSILON_SYM else BLANK
                if label_id != expected:
                    raise ValueError(f"symbol table line {lineno}: {sym} must have id {expected}")
                continue
            if label_id in table._id_to_sym or sym in table._sym_to_id:
                raise ValueError(f"symbol table line {lineno}: duplicate entry {raw!r}")
            table._sym_to_id[sym] = label_id
            table._id_to_sym[label_id] = sym
        return table


def default_label_names(k: int) -> list[str]:
    return [chr(ord("a") + i) if i < 26 else f"l{i}" for i in range(k)]
