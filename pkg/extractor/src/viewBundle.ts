import { existsSync, readFileSync } from 'node:fs'
import * as path from 'node:path'
import { ConditioningMissing, ExtractorError } from './errors.js'
import { readFeatureMap } from './featureFile.js'

/** Parsed view.json written next to each rendered view's images. */
export interface ViewInfo {
  viewId: number
  thetaDeg: number
  phiDeg: number
  distance: number
  fovYDeg: number
  height: number
  width: number
  hasNormal: boolean
}

export interface PositionMap {
  height: number
  width: number
  /** Row-major (h * width + w) * 3 + axis; background pixels are exactly zero. */
  data: Float32Array
}

export function readViewInfo(viewDir: string): ViewInfo {
  const file = path.join(viewDir, 'view.json')
  let doc: Record<string, unknown>
  try {
    doc = JSON.parse(readFileSync(file, 'ascii'))
  } catch (err) {
    throw new ExtractorError(`cannot read ${file}: ${err}`)
  }
  return {
    viewId: Number(doc.view_id),
    thetaDeg: Number(doc.theta_deg),
    phiDeg: Number(doc.phi_deg),
    distance: Number(doc.distance),
    fovYDeg: Number(doc.fov_y_deg),
    height: Number(doc.H),
    width: Number(doc.W),
    hasNormal: Boolean(doc.has_normal),
  }
}

/** Camera block copied onto every emitted sidecar and manifest entry. */
export function cameraOf(info: ViewInfo): Record<string, number> {
  return {
    distance: info.distance,
    fov_y_deg: info.fovYDeg,
    phi_deg: info.phiDeg,
    theta_deg: info.thetaDeg,
  }
}

export function readPositionMap(viewDir: string): PositionMap {
  const file = path.join(viewDir, 'position.d3ff')
  const fmap = readFeatureMap(file)
  if (fmap.channels !== 3) {
    throw new ExtractorError(`${file}: expected 3 channels of world position, got ${fmap.channels}`)
  }
  return { height: fmap.height, width: fmap.width, data: fmap.data }
}

/**
 * Conditioning image kinds for a view: depth plus normals for meshes,
 * depth plus edges for point clouds (which render no normals).
 */
export function conditioningKinds(info: ViewInfo): string[] {
  return info.hasNormal ? ['depth', 'normal'] : ['depth', 'edge']
}

export function assertConditioning(viewDir: string, info: ViewInfo): void {
  for (const kind of conditioningKinds(info)) {
    const file = path.join(viewDir, `${kind}.png`)
    if (!existsSync(file)) {
      throw new ConditioningMissing(`${viewDir}: missing ${kind}.png`)
    }
  }
}
