import * as tf from '@tensorflow/tfjs'
import { beforeAll, describe, expect, it } from 'vitest'
import { FeatureNet, STAGE_CHANNELS, STAGE_NAMES } from '../src/net'

beforeAll(async () => {
  await tf.ready()
})

function randomImage(h: number, w: number, seed = 7): tf.Tensor3D {
  // deterministic image values without relying on tf randomness
  const values = new Float32Array(h * w * 3)
  let state = seed >>> 0
  for (let i = 0; i < values.length; i++) {
    state = (state * 1664525 + 1013904223) >>> 0
    values[i] = state / 4294967296
  }
  return tf.tensor3d(values, [h, w, 3])
}

describe('FeatureNet', () => {
  it('produces the declared shapes and scale ratios', () => {
    const net = new FeatureNet()
    const img = randomImage(32, 48)
    const levels = net.extract(img, STAGE_NAMES)
    expect(levels).toHaveLength(5)
    levels.forEach((level, i) => {
      expect(level.channels).toBe(STAGE_CHANNELS[i])
      expect(level.scaleNum).toBe(1)
      expect(level.scaleDen).toBe(2 ** i)
      expect(level.height).toBe(Math.ceil(32 / 2 ** i))
      expect(level.width).toBe(Math.ceil(48 / 2 ** i))
      expect(level.data.length).toBe(level.channels * level.height * level.width)
    })
  })

  it('is deterministic across instances', () => {
    const img = randomImage(24, 24)
    const a = new FeatureNet({ seed: 5 }).extract(img, ['relu2_1'])
    const b = new FeatureNet({ seed: 5 }).extract(img, ['relu2_1'])
    expect(Buffer.from(a[0].data.buffer).equals(Buffer.from(b[0].data.buffer))).toBe(true)
  })

  it('different seeds give different kernels', () => {
    const img = randomImage(16, 16)
    const a = new FeatureNet({ seed: 5 }).extract(img, ['relu1_1'])
    const b = new FeatureNet({ seed: 6 }).extract(img, ['relu1_1'])
    expect(Buffer.from(a[0].data.buffer).equals(Buffer.from(b[0].data.buffer))).toBe(false)
  })

  it('zero image yields finite (zero) activations', () => {
    const img = tf.zeros([16, 16, 3]) as tf.Tensor3D
    const levels = new FeatureNet().extract(img, STAGE_NAMES)
    for (const level of levels) {
      for (const v of level.data) {
        expect(Number.isFinite(v)).toBe(true)
      }
      expect(Math.max(...Array.from(level.data))).toBe(0)
    }
  })

  it('rejects unknown layers and lists valid names', () => {
    const net = new FeatureNet()
    expect(() => net.validateLayers(['conv9_9'])).toThrow(/relu1_1.*relu5_1/s)
  })

  it('accepts explicit weights of the right size', () => {
    const kernel = new Array(3 * 3 * 3 * 16).fill(0.01)
    const net = new FeatureNet({ weights: { relu1_1: kernel } })
    const img = randomImage(8, 8)
    const [level] = net.extract(img, ['relu1_1'])
    expect(level.channels).toBe(16)
    expect(() => new FeatureNet({ weights: { relu1_1: [1, 2, 3] } })).toThrow(
      /expected 432/,
    )
  })

  it('requested layer order is preserved in the output', () => {
    const net = new FeatureNet()
    const img = randomImage(16, 16)
    const levels = net.extract(img, ['relu3_1', 'relu1_1'])
    expect(levels[0].scaleDen).toBe(4)
    expect(levels[1].scaleDen).toBe(1)
  })
})
