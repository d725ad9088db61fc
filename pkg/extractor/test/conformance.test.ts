import { execFileSync } from 'node:child_process'
import { mkdtempSync, readdirSync, readFileSync, rmSync, writeFileSync } from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { afterAll, describe, expect, it } from 'vitest'
import { DIFFUSION_CHANNELS, resolveConfig } from '../src/config.js'
import { extractShape } from '../src/extract.js'
import { readFeatureHeader, readFeatureMap, sidecarPath } from '../src/featureFile.js'

const tmp = mkdtempSync(path.join(os.tmpdir(), 'd3ff-conf-'))
afterAll(() => rmSync(tmp, { recursive: true, force: true }))

function python(args: string[], input?: string): string {
  return execFileSync('python3', args, { encoding: 'utf8', input })
}

/** Closed uv-sphere OBJ, z-up poles; winding is irrelevant to the renderer. */
function uvSphereObj(stacks: number, slices: number, radius = 0.5): string {
  const lines: string[] = [`v 0 0 ${radius}`]
  for (let i = 1; i < stacks; i++) {
    const theta = (Math.PI * i) / stacks
    for (let j = 0; j < slices; j++) {
      const phi = (2 * Math.PI * j) / slices
      const x = radius * Math.sin(theta) * Math.cos(phi)
      const y = radius * Math.sin(theta) * Math.sin(phi)
      const z = radius * Math.cos(theta)
      lines.push(`v ${x} ${y} ${z}`)
    }
  }
  lines.push(`v 0 0 ${-radius}`)
  const ring = (i: number, j: number) => 2 + (i - 1) * slices + (j % slices)
  const bottom = 2 + (stacks - 1) * slices
  for (let j = 0; j < slices; j++) lines.push(`f 1 ${ring(1, j)} ${ring(1, j + 1)}`)
  for (let i = 1; i < stacks - 1; i++) {
    for (let j = 0; j < slices; j++) {
      const [a, b, c, d] = [ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)]
      lines.push(`f ${a} ${b} ${d}`, `f ${a} ${d} ${c}`)
    }
  }
  for (let j = 0; j < slices; j++) lines.push(`f ${bottom} ${ring(stacks - 1, j + 1)} ${ring(stacks - 1, j)}`)
  return lines.join('\n') + '\n'
}

// the distiller's own validation plus full reads of one view's files
const VALIDATE_SCRIPT = `
import sys
from pathlib import Path
from d3ff.feature_store import load_manifest, read_feature_map, validate_manifest
mp = Path(sys.argv[1])
m = load_manifest(mp)
validate_manifest(m, mp.parent)
v = m.views[0]
for t, rel in v.diffusion.items():
    fm = read_feature_map(mp.parent / rel)
    assert fm.kind == "diffusion" and fm.timestep == t, (fm.kind, fm.timestep)
fm = read_feature_map(mp.parent / v.dino)
assert fm.kind == "dino" and fm.timestep is None
print("ok", len(m.views))
`

describe('conformance against the reference distiller', () => {
  it(
    'emits files its reader validates and distills end to end',
    async () => {
      const obj = path.join(tmp, 'sphere.obj')
      writeFileSync(obj, uvSphereObj(9, 8))
      const views = path.join(tmp, 'views')
      python(['-m', 'd3ff.cli', 'render', '--shape', obj, '--out', views,
              '--n-views', '2', '--resolution', '64'])

      const config = resolveConfig({
        promptSubject: 'sphere', steps: 30, featureResolution: 16, seed: 7,
      })
      const features = path.join(tmp, 'features')
      const result = await extractShape(views, features, config)
      expect(result.views).toBe(2)
      expect(result.failures).toEqual([])

      // per view: 9 diffusion maps (steps 8..0 of T=30) plus one ViT map
      for (const viewName of ['view_000', 'view_001']) {
        const dir = path.join(features, viewName)
        const diffusion = readdirSync(dir).filter((f) => /^diffusion_t\d+\.d3ff$/.test(f))
        expect(diffusion).toHaveLength(9)
        for (const f of diffusion) {
          expect(readFeatureHeader(path.join(dir, f)).channels).toBe(DIFFUSION_CHANNELS)
        }
        expect(readFeatureHeader(path.join(dir, 'dino.d3ff'))).toEqual({
          height: 16, width: 16, channels: 384,
        })
      }

      // the reference implementation validates headers, ids, and kinds
      expect(python(['-c', VALIDATE_SCRIPT, result.manifestPath])).toBe('ok 2\n')

      // full distillation through the manifest
      const desc = path.join(tmp, 'sphere.d3ff')
      const out = JSON.parse(
        python(['-m', 'd3ff.cli', 'distill', '--shape', obj, '--manifest', result.manifestPath,
                '--out', desc, '--n-views', '2', '--resolution', '64', '--ball-radius', '0.05']),
      )
      expect(out.failures).toEqual([])
      expect(out.dim).toBe(DIFFUSION_CHANNELS + 384)
      expect(out.covered).toBeGreaterThan(0)

      // descriptors are unit rows wherever covered
      const matrix = readFeatureMap(desc)
      const meta = JSON.parse(readFileSync(sidecarPath(desc), 'ascii'))
      const coverage: number[] = meta.coverage
      expect(matrix.height).toBe(coverage.length)
      for (let p = 0; p < matrix.height; p++) {
        if (coverage[p] === 0) continue
        let norm = 0
        for (let c = 0; c < matrix.channels; c++) {
          const v = matrix.data[p * matrix.channels + c]
          norm += v * v
        }
        expect(Math.abs(Math.sqrt(norm) - 1)).toBeLessThan(1e-5)
      }
    },
    180_000,
  )
})
