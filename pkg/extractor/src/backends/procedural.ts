import { FeatureBackend, RgbImage, ViewFeatures, ViewGeometry } from '../backend.js'
import { DIFFUSION_CHANNELS, ResolvedConfig } from '../config.js'
import { mulberry32 } from '../rng.js'
import { timestepWindow } from '../window.js'
import { PositionMap } from '../viewBundle.js'

interface ChannelBank {
  /** Unit direction per channel, flattened (channel * 3 + axis). */
  directions: Float32Array
  frequencies: Float32Array
  phases: Float32Array
  /** Per-channel timestep drift so different denoising steps differ. */
  drifts: Float32Array
}

function buildBank(channels: number, seed: number, withDrift: boolean): ChannelBank {
  const rand = mulberry32(seed)
  const directions = new Float32Array(channels * 3)
  const frequencies = new Float32Array(channels)
  const phases = new Float32Array(channels)
  const drifts = new Float32Array(channels)
  for (let c = 0; c < channels; c++) {
    let x = rand() * 2 - 1
    let y = rand() * 2 - 1
    let z = rand() * 2 - 1
    const norm = Math.hypot(x, y, z) || 1
    directions[c * 3] = x / norm
    directions[c * 3 + 1] = y / norm
    directions[c * 3 + 2] = z / norm
    // octave ladder pi * 2^0 .. pi * 2^4, cycling over channels
    frequencies[c] = Math.PI * 2 ** (c % 5)
    phases[c] = rand() * 2 * Math.PI
    drifts[c] = withDrift ? rand() * 0.7 : 0
  }
  return { directions, frequencies, phases, drifts }
}

/**
 * Positions sampled at feature-grid pixel centers, nearest render pixel.
 * Returns flattened (h * w * 3); background stays exactly zero.
 */
function samplePositions(positions: PositionMap, res: number): Float32Array {
  const out = new Float32Array(res * res * 3)
  for (let i = 0; i < res; i++) {
    const r = Math.min(positions.height - 1, Math.floor(((i + 0.5) * positions.height) / res))
    for (let j = 0; j < res; j++) {
      const c = Math.min(positions.width - 1, Math.floor(((j + 0.5) * positions.width) / res))
      const src = (r * positions.width + c) * 3
      const dst = (i * res + j) * 3
      out[dst] = positions.data[src]
      out[dst + 1] = positions.data[src + 1]
      out[dst + 2] = positions.data[src + 2]
    }
  }
  return out
}

function evaluateBank(
  sampled: Float32Array,
  pixels: number,
  bank: ChannelBank,
  channels: number,
  timestep: number,
): Float32Array {
  const out = new Float32Array(pixels * channels)
  for (let p = 0; p < pixels; p++) {
    const x = sampled[p * 3]
    const y = sampled[p * 3 + 1]
    const z = sampled[p * 3 + 2]
    if (x === 0 && y === 0 && z === 0) continue // background
    for (let c = 0; c < channels; c++) {
      const dot =
        x * bank.directions[c * 3] + y * bank.directions[c * 3 + 1] + z * bank.directions[c * 3 + 2]
      out[p * channels + c] = Math.sin(
        bank.frequencies[c] * dot + bank.phases[c] + timestep * bank.drifts[c],
      )
    }
  }
  return out
}

function textureFromPositions(positions: PositionMap): RgbImage {
  const { height, width, data } = positions
  const pixels = new Uint8Array(height * width * 3)
  for (let p = 0; p < height * width; p++) {
    const x = data[p * 3]
    const y = data[p * 3 + 1]
    const z = data[p * 3 + 2]
    if (x === 0 && y === 0 && z === 0) continue
    pixels[p * 3] = Math.round(255 * Math.min(1, Math.max(0, x + 0.5)))
    pixels[p * 3 + 1] = Math.round(255 * Math.min(1, Math.max(0, y + 0.5)))
    pixels[p * 3 + 2] = Math.round(255 * Math.min(1, Math.max(0, z + 0.5)))
  }
  return { height, width, pixels }
}

/**
 * Deterministic drop-in for the diffusion backend: features are seeded
 * sinusoids of world position, so two pixels imaging the same surface point
 * agree across views, maps differ across timesteps, and reruns are
 * byte-identical. Carries no semantics; it exists to exercise the full
 * extraction and distillation plumbing without model weights.
 */
export class ProceduralBackend implements FeatureBackend {
  readonly name = 'procedural'

  async run(view: ViewGeometry, config: ResolvedConfig): Promise<ViewFeatures> {
    const res = config.featureResolution
    const sampled = samplePositions(view.positions, res)
    const pixels = res * res
    const diffusionBank = buildBank(DIFFUSION_CHANNELS, config.seed, true)
    // decouple the companion stream from the diffusion stream
    const vitBank = buildBank(config.vitDim, config.seed ^ 0x9e3779b9, false)

    const diffusion = new Map<number, Float32Array>()
    for (const t of timestepWindow(config.steps)) {
      diffusion.set(t, evaluateBank(sampled, pixels, diffusionBank, DIFFUSION_CHANNELS, t))
    }
    return {
      textured: textureFromPositions(view.positions),
      diffusion,
      vit: evaluateBank(sampled, pixels, vitBank, config.vitDim, 0),
      featureHeight: res,
      featureWidth: res,
    }
  }
}
