"""How one 8-bit weight slot is recycled into sign bits.

Each recursion freezes the sign bit of the plastic weight and hands the
remaining bits to a fresh plastic weight one bit narrower.  This script
follows a single slot through that cycle and then shows the storage
arithmetic for a whole network.
"""
from rbnn import BitLedger, QFormat, binarize, narrow, quantize
from rbnn.metrics import storage_report
from rbnn.model import slot_count

q8 = QFormat.weight(8)
w = quantize(-0.3, q8)
print(f"-0.3 in {q8}: raw {w.raw}, value {w.real}, sign {binarize(w):+d}")

# dropping low bits keeps the sign; negatives round toward -inf
for bits in range(7, 1, -1):
    v = narrow(w, QFormat.weight(bits))
    print(f"  narrowed to {v.format}: raw {v.raw:4d}, value {v.real:+.4f}, sign {binarize(v):+d}")

# the ledger view: S slots of B bits, k of them now frozen sign bits
ledger = BitLedger(slot_count(100), 16)
print()
print(" k  plastic bits  synapses  bits/weight  kB")
while True:
    r = storage_report(ledger)
    print(f"{r.recursions:2d}  {ledger.plastic_bits:12d}  {r.total_synapses:8d}  {r.bits_per_weight:11.4f}  "
          f"{r.storage_kB:.2f}")
    if ledger.recursion_index == 6:
        break
    ledger = ledger.recycled()
print("storage stays fixed while the synapse count grows with every recursion")
