import { mkdtempSync, rmSync } from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { afterAll, describe, expect, it } from 'vitest'
import { ViewGeometry } from '../src/backend.js'
import { DiffusionBackend } from '../src/backends/diffusion.js'
import { ProceduralBackend } from '../src/backends/procedural.js'
import { buildPrompt, DIFFUSION_CHANNELS, resolveConfig } from '../src/config.js'
import { ModelLoadFailure } from '../src/errors.js'
import { conditioningKinds, readPositionMap, readViewInfo } from '../src/viewBundle.js'
import { makeViewBundle } from './helpers.js'

const tmp = mkdtempSync(path.join(os.tmpdir(), 'd3ff-bk-'))
afterAll(() => rmSync(tmp, { recursive: true, force: true }))

function geometry(name: string, hasNormal = true): ViewGeometry {
  const dir = path.join(tmp, name)
  makeViewBundle(dir, { hasNormal })
  return { dir, info: readViewInfo(dir), positions: readPositionMap(dir) }
}

const config = resolveConfig({ promptSubject: 'camel', steps: 30, featureResolution: 8, seed: 11 })

describe('prompts and conditioning', () => {
  it('appends the positive suffix to the subject', () => {
    expect(buildPrompt(config)).toEqual({
      positive: 'camel, best quality, highly detailed, photorealistic',
      negative: 'lowres, low quality, monochrome',
    })
  })

  it('conditions meshes on depth+normal and clouds on depth+edge', () => {
    expect(conditioningKinds(geometry('mesh').info)).toEqual(['depth', 'normal'])
    expect(conditioningKinds(geometry('cloud', false).info)).toEqual(['depth', 'edge'])
  })
})

describe('ProceduralBackend', () => {
  it('emits one map per kept timestep at the documented channel count', async () => {
    const features = await new ProceduralBackend().run(geometry('counts'), config)
    expect([...features.diffusion.keys()]).toEqual([8, 7, 6, 5, 4, 3, 2, 1, 0])
    for (const data of features.diffusion.values()) {
      expect(data.length).toBe(8 * 8 * DIFFUSION_CHANNELS)
    }
    expect(features.vit.length).toBe(8 * 8 * config.vitDim)
    expect(features.textured.pixels.length).toBe(8 * 8 * 3)
  })

  it('is byte-identical across reruns with one seed and differs across seeds', async () => {
    const view = geometry('determinism')
    const backend = new ProceduralBackend()
    const a = await backend.run(view, config)
    const b = await backend.run(view, config)
    expect(Array.from(a.diffusion.get(0)!)).toEqual(Array.from(b.diffusion.get(0)!))
    expect(Array.from(a.vit)).toEqual(Array.from(b.vit))

    const other = await backend.run(view, { ...config, seed: 12 })
    expect(Array.from(other.diffusion.get(0)!)).not.toEqual(Array.from(a.diffusion.get(0)!))
  })

  it('varies features across timesteps but not the background', async () => {
    const features = await new ProceduralBackend().run(geometry('steps'), config)
    const t0 = features.diffusion.get(0)!
    const t8 = features.diffusion.get(8)!
    expect(Array.from(t8)).not.toEqual(Array.from(t0))
    // the top-left quarter of the bundle is background: zero features
    for (let c = 0; c < DIFFUSION_CHANNELS; c++) {
      expect(t0[c]).toBe(0)
      expect(t8[c]).toBe(0)
    }
    // foreground pixels carry signal
    const last = (8 * 8 - 1) * DIFFUSION_CHANNELS
    expect(t0.subarray(last, last + DIFFUSION_CHANNELS).some((v) => v !== 0)).toBe(true)
  })

  it('gives the same feature to the same world point seen from two views', async () => {
    // identical position maps standing in for two cameras imaging one patch
    const va = geometry('shared-a')
    const vb = { ...geometry('shared-b'), positions: va.positions }
    const backend = new ProceduralBackend()
    const a = await backend.run(va, config)
    const b = await backend.run(vb, config)
    expect(Array.from(a.diffusion.get(3)!)).toEqual(Array.from(b.diffusion.get(3)!))
  })
})

describe('DiffusionBackend', () => {
  it('refuses to load without a model directory', async () => {
    await expect(DiffusionBackend.load(null)).rejects.toThrow(ModelLoadFailure)
    await expect(DiffusionBackend.load(null)).rejects.toThrow(/--backend procedural/)
  })

  it('names the missing export files', async () => {
    await expect(DiffusionBackend.load(tmp)).rejects.toThrow(/unet\/model\.onnx/)
  })
})
