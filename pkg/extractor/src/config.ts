/** Channel count of the hooked UNet decoder layer's feature maps. */
export const DIFFUSION_CHANNELS = 1280

/** Channel count of the vision-transformer companion features (ViT-S/14). */
export const DEFAULT_VIT_CHANNELS = 384

export type BackendName = 'procedural' | 'diffusion'

export interface ExtractorConfig {
  /** Short subject for the conditioning prompt, e.g. 'human' or 'camel'. */
  promptSubject: string
  positiveSuffix?: string
  negativePrompt?: string
  /** Total denoising steps T; features are kept for the final ceil(T/4)..0. */
  steps?: number
  seed?: number
  /** Spatial edge length of emitted feature maps (the hooked layer's grid). */
  featureResolution?: number
  /**
   * Which UNet decoder layer to hook. Layer 1 is the empirical default:
   * the first 1280-channel decoder stage, fine enough to localize parts but
   * coarse enough to stay semantic.
   */
  decoderLayer?: number
  vitDim?: number
  guidanceScale?: number
  conditioningScale?: number
  backend?: BackendName
  /** Directory holding model weights; required by the diffusion backend. */
  modelDir?: string
}

export interface ResolvedConfig {
  promptSubject: string
  positiveSuffix: string
  negativePrompt: string
  steps: number
  seed: number
  featureResolution: number
  decoderLayer: number
  vitDim: number
  guidanceScale: number
  conditioningScale: number
  backend: BackendName
  modelDir: string | null
}

export function resolveConfig(config: ExtractorConfig): ResolvedConfig {
  const resolved: ResolvedConfig = {
    promptSubject: config.promptSubject,
    positiveSuffix: config.positiveSuffix ?? 'best quality, highly detailed, photorealistic',
    negativePrompt: config.negativePrompt ?? 'lowres, low quality, monochrome',
    steps: config.steps ?? 30,
    seed: config.seed ?? 0,
    featureResolution: config.featureResolution ?? 32,
    decoderLayer: config.decoderLayer ?? 1,
    vitDim: config.vitDim ?? DEFAULT_VIT_CHANNELS,
    guidanceScale: config.guidanceScale ?? 7.5,
    conditioningScale: config.conditioningScale ?? 1.0,
    backend: config.backend ?? 'procedural',
    modelDir: config.modelDir ?? null,
  }
  if (!resolved.promptSubject) {
    throw new RangeError('promptSubject must be a non-empty string')
  }
  if (!Number.isInteger(resolved.steps) || resolved.steps < 4) {
    throw new RangeError(`steps must be an integer >= 4 so the kept window is non-trivial, got ${resolved.steps}`)
  }
  if (resolved.featureResolution < 4) {
    throw new RangeError(`featureResolution must be >= 4, got ${resolved.featureResolution}`)
  }
  if (resolved.vitDim < 1) {
    throw new RangeError(`vitDim must be >= 1, got ${resolved.vitDim}`)
  }
  return resolved
}

/** Full positive and negative prompts assembled from the subject. */
export function buildPrompt(config: ResolvedConfig): { positive: string; negative: string } {
  return {
    positive: `${config.promptSubject}, ${config.positiveSuffix}`,
    negative: config.negativePrompt,
  }
}
