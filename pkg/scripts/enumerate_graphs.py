"""Write every connected 8-node graph, up to isomorphism, to tests/data/connected_8.g6.

Each 8-node graph minus one vertex is some 7-node graph, so extending every
7-node atlas graph by one vertex in all 127 ways reaches every isomorphism
class; duplicates are removed with WL-hash buckets plus an exact check.
Expected count: 11117.
"""

from pathlib import Path

import networkx as nx

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "connected_8.g6"


def main() -> None:
    sevens = [g for g in nx.graph_atlas_g() if g.number_of_nodes() == 7]
    buckets: dict[str, list[nx.Graph]] = {}
    found = []
    for g in sevens:
        for mask in range(1, 128):
            h = g.copy()
            h.add_node(7)
            h.add_edges_from((7, i) for i in range(7) if mask >> i & 1)
            if not nx.is_connected(h):
                continue
            bucket = buckets.setdefault(nx.weisfeiler_lehman_graph_hash(h, iterations=3), [])
            if any(nx.is_isomorphic(h, other) for other in bucket):
                continue
            bucket.append(h)
            found.append(h)
    lines = sorted(nx.to_graph6_bytes(h, header=False).decode().strip() for h in found)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text("\n".join(lines) + "\n")
    print(f"{len(lines)} graphs -> {OUT}")


if __name__ == "__main__":
    main()
