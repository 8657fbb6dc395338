# %% [markdown]
# When is the latent vector pinned down by the output?
#
# The certificate checks three conditions built from the hidden supports of
# one forward pass. Under the generic-weights assumption the spark and
# subrank quantities have closed forms; on tiny nets exact enumeration gives
# the same verdict. The conditions are sufficient, not necessary: the
# 8 -> 48 -> 196 net fails the last-layer test yet is inverted exactly in
# practice, while the 8 -> 10 -> 196 net has fewer active units than latent
# coordinates and cannot be inverted at all.

# %%
from geninvert import certify_uniqueness, forward, make_rng, random_network

for dims in ([2, 6, 40], [8, 10, 196], [8, 48, 196]):
    net = random_network(dims, "tanh", make_rng(1))
    trace = forward(net, make_rng(0).standard_normal(dims[0]))
    cert = certify_uniqueness(net, trace, "generic")
    print(f"dims {dims}, hidden cardinalities {trace.cardinalities}")
    print(cert.table())
    print()

# %%
net = random_network([2, 5, 7], "tanh", make_rng(5))
trace = forward(net, make_rng(6).standard_normal(2))
print("exact:  ", certify_uniqueness(net, trace, "exact").verdict)
print("generic:", certify_uniqueness(net, trace, "generic").verdict)
