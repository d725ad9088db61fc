import { describe, expect, it } from 'vitest'
import { timestepWeights, timestepWindow } from '../src/window.js'

describe('timestepWindow', () => {
  it('keeps the final quarter down to zero for T=30', () => {
    expect(timestepWindow(30)).toEqual([8, 7, 6, 5, 4, 3, 2, 1, 0])
  })

  it('rounds the quarter up', () => {
    expect(timestepWindow(4)).toEqual([1, 0])
    expect(timestepWindow(5)).toEqual([2, 1, 0])
    expect(timestepWindow(8)).toEqual([2, 1, 0])
    expect(timestepWindow(100)).toEqual(
      Array.from({ length: 26 }, (_, i) => 25 - i),
    )
  })

  it('rejects non-positive and fractional steps', () => {
    expect(() => timestepWindow(0)).toThrow(RangeError)
    expect(() => timestepWindow(-3)).toThrow(RangeError)
    expect(() => timestepWindow(7.5)).toThrow(RangeError)
  })
})

describe('timestepWeights', () => {
  it('spaces 0.1 to 1.0 across the T=30 window', () => {
    const weights = timestepWeights(30)
    expect(weights).toHaveLength(9)
    expect(weights[0]).toBeCloseTo(0.1, 12)
    expect(weights[8]).toBeCloseTo(1.0, 12)
    expect(weights[4]).toBeCloseTo(0.55, 12)
    for (let i = 1; i < weights.length; i++) {
      expect(weights[i] - weights[i - 1]).toBeCloseTo(0.9 / 8, 12)
    }
  })

  it('aligns the smallest weight with the noisiest kept step', () => {
    const window = timestepWindow(30)
    const weights = timestepWeights(30)
    expect(window[0]).toBe(8) // noisiest kept step
    expect(weights[0]).toBeCloseTo(0.1, 12)
    expect(window[window.length - 1]).toBe(0)
    expect(weights[weights.length - 1]).toBeCloseTo(1.0, 12)
  })
})
