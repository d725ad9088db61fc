import { mkdirSync, writeFileSync } from 'node:fs'
import * as path from 'node:path'
import { writeFeatureMap } from '../src/featureFile.js'

export interface FakeViewOptions {
  viewId?: number
  height?: number
  width?: number
  hasNormal?: boolean
  /** Which conditioning PNGs to actually create. */
  images?: string[]
}

/**
 * Write a minimal view bundle: view.json, a position map whose foreground is
 * a tilted plane patch (top-left quarter stays background), and empty
 * conditioning images (only their existence is checked).
 */
export function makeViewBundle(dir: string, options: FakeViewOptions = {}): void {
  const viewId = options.viewId ?? 0
  const height = options.height ?? 8
  const width = options.width ?? 8
  const hasNormal = options.hasNormal ?? true
  const images = options.images ?? (hasNormal ? ['depth', 'mask', 'normal'] : ['depth', 'mask', 'edge'])

  mkdirSync(dir, { recursive: true })
  const info = {
    view_id: viewId,
    theta_deg: 30.0,
    phi_deg: 45.0,
    distance: 2.5,
    fov_y_deg: 50.0,
    H: height,
    W: width,
    depth_near: 2.0,
    depth_far: 3.0,
    has_normal: hasNormal,
  }
  writeFileSync(path.join(dir, 'view.json'), JSON.stringify(info) + '\n')

  const positions = new Float32Array(height * width * 3)
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      if (r < height / 2 && c < width / 2) continue // background quarter
      const i = (r * width + c) * 3
      positions[i] = c / width - 0.5
      positions[i + 1] = r / height - 0.5
      positions[i + 2] = 0.25 * Math.sin(r + c)
    }
  }
  writeFeatureMap(
    {
      viewId,
      kind: 'position',
      height,
      width,
      channels: 3,
      data: positions,
      camera: { distance: 2.5, fov_y_deg: 50.0, phi_deg: 45.0, theta_deg: 30.0 },
    },
    path.join(dir, 'position.d3ff'),
  )
  for (const name of images) {
    writeFileSync(path.join(dir, `${name}.png`), Buffer.from([0x89, 0x50, 0x4e, 0x47]))
  }
}
