/** Denoising-window arithmetic shared by every backend. */

/**
 * Timesteps whose features are kept: the final quarter of the schedule,
 * ceil(steps / 4) down to 0 inclusive, noisiest first.
 */
export function timestepWindow(steps: number): number[] {
  if (!Number.isInteger(steps) || steps < 1) {
    throw new RangeError(`steps must be a positive integer, got ${steps}`)
  }
  const start = Math.ceil(steps / 4)
  const window: number[] = []
  for (let t = start; t >= 0; t--) window.push(t)
  return window
}

/**
 * Aggregation weights aligned with timestepWindow: linearly spaced from 0.1
 * at the noisiest kept step to 1.0 at the final step.
 */
export function timestepWeights(steps: number): number[] {
  const n = timestepWindow(steps).length
  if (n === 1) return [1.0]
  const weights: number[] = []
  for (let i = 0; i < n; i++) weights.push(0.1 + (0.9 * i) / (n - 1))
  return weights
}
