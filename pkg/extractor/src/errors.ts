export class ExtractorError extends Error {
  constructor(message: string) {
    super(message)
    this.name = new.target.name
  }
}

/** Model weights absent, unreadable, or incompatible with this backend. */
export class ModelLoadFailure extends ExtractorError {}

/** A view bundle lacks a conditioning image the backend needs. */
export class ConditioningMissing extends ExtractorError {}

/** A binary feature file fails header or length validation. */
export class MalformedFeatureFile extends ExtractorError {}
