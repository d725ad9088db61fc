import { ResolvedConfig } from './config.js'
import { PositionMap, ViewInfo } from './viewBundle.js'

export interface ViewGeometry {
  dir: string
  info: ViewInfo
  positions: PositionMap
}

export interface RgbImage {
  height: number
  width: number
  /** Row-major RGB8, 3 bytes per pixel. */
  pixels: Uint8Array
}

export interface ViewFeatures {
  textured: RgbImage
  /** Timestep -> row-major (featureResolution^2 * DIFFUSION_CHANNELS) floats. */
  diffusion: Map<number, Float32Array>
  /** Row-major (featureResolution^2 * vitDim) floats from the textured image. */
  vit: Float32Array
  featureHeight: number
  featureWidth: number
}

/**
 * A backend turns one view's conditioning geometry into a textured image
 * plus the per-timestep feature maps captured along the way.
 */
export interface FeatureBackend {
  readonly name: string
  run(view: ViewGeometry, config: ResolvedConfig): Promise<ViewFeatures>
}
