/**
 * mulberry32: a small, well-distributed 32-bit PRNG. Node has no seedable
 * generator in the standard library, and reproducibility across reruns is a
 * hard requirement for the procedural backend.
 */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}
