#include <doctest.h>

#include <cmath>
#include <set>

#include "boqsa/model.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace boqsa;
using boqsa::test::random_tensor;
using T = Tensor<double>;

namespace {

EncoderConfig small_encoder(std::size_t stride) {
    EncoderConfig c;
    c.channels = 4;
    c.layers = 2;
    c.first_stride = stride;
    return c;
}

MixtureDecoderConfig small_decoder() {
    MixtureDecoderConfig c;
    c.channels = 5;
    c.hidden_layers = 3;
    c.upsample_layers = 2;
    return c;
}

}  // namespace

TEST_CASE("encoder geometry and purity") {
    Rng rng(1);
    const Encoder<double> flat(small_encoder(1), 8, rng);
    const Encoder<double> strided(small_encoder(2), 8, rng);
    const T image = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    const T a = flat(image);
    CHECK(a.shape() == Shape{2, 64, 4});
    CHECK(flat.num_positions() == 64);
    CHECK(strided(image).shape() == Shape{2, 16, 4});
    const T b = flat(image.clone());
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    CHECK_THROWS_AS(flat(T::zeros({1, 3, 16, 16})), DimensionError);
}

TEST_CASE("encoder conv-weight gradients on an 8x8 input") {
    Rng rng(2);
    EncoderConfig c = small_encoder(1);
    Encoder<double> enc(c, 8, rng);
    // Biases away from zero keep the relu units off their kinks for these probes.
    for (auto& conv : enc.convs)
        for (auto& v : conv.bias.mutable_data()) v = rng.uniform(-0.3, 0.3);
    const T image = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    const T proj = random_tensor({1, 64, 4}, rng);
    const double err = boqsa::test::gradient_error([&] { return sum(mul(enc(image), proj)); },
                                                   {&enc.convs[0].weight, &enc.convs[1].weight}, 1e-6);
    CHECK(err < 1e-3);
}

TEST_CASE("decoder with one slot: mask is 1 and recon is the slot image") {
    Rng rng(3);
    const MixtureDecoder<double> dec(small_decoder(), 6, 8, rng);
    const auto out = dec(random_tensor({2, 1, 6}, rng));
    CHECK(out.recon.shape() == Shape{2, 3, 8, 8});
    CHECK(out.masks.shape() == Shape{2, 1, 1, 8, 8});
    for (double m : out.masks.data()) CHECK(m == 1.0);
    for (std::size_t i = 0; i < out.recon.numel(); ++i) CHECK(out.recon.at(i) == out.rgb_per_slot.at(i));
}

TEST_CASE("decoder recon equals a brute-force weighted sum") {
    Rng rng(4);
    const MixtureDecoder<double> dec(small_decoder(), 6, 8, rng);
    const std::size_t b = 2, k = 4, px = 64;
    const auto out = dec(random_tensor({b, k, 6}, rng, -2, 2));
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < px; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j)
                    acc += out.masks.at((bi * k + j) * px + p) * out.rgb_per_slot.at(((bi * k + j) * 3 + c) * px + p);
                CHECK(std::abs(out.recon.at((bi * 3 + c) * px + p) - acc) <= 1e-6);
            }
}

TEST_CASE("decoder is equivariant to slot order") {
    Rng rng(5);
    const MixtureDecoder<double> dec(small_decoder(), 6, 8, rng);
    const std::size_t k = 3, d = 6, px = 64;
    const T slots = random_tensor({1, k, d}, rng, -2, 2);
    const std::size_t perm[3] = {2, 0, 1};
    std::vector<double> moved(slots.numel());
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t e = 0; e < d; ++e) moved[j * d + e] = slots.at(perm[j] * d + e);
    const auto a = dec(slots);
    const auto b = dec(T::from_data({1, k, d}, moved));
    CHECK(boqsa::test::max_abs_diff(a.recon.data(), b.recon.data()) <= 1e-6);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t p = 0; p < px; ++p) {
            CHECK(std::abs(b.masks.at(j * px + p) - a.masks.at(perm[j] * px + p)) <= 1e-12);
            CHECK(std::abs(b.rgb_per_slot.at(j * 3 * px + p) - a.rgb_per_slot.at(perm[j] * 3 * px + p)) <= 1e-12);
        }
}

TEST_CASE("mask simplex on random decoders") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        CAPTURE(seed);
        CHECK(boqsa::test::mask_simplex_error(seed) <= 1e-5);
    }
}

TEST_CASE("decoder output matches the image for every supported geometry") {
    Rng rng(6);
    for (std::size_t image : {8u, 16u, 32u, 64u}) {
        for (std::size_t up = 1; (image >> up) >= 1 && up <= 4; ++up) {
            MixtureDecoderConfig c;
            c.channels = 2;
            c.upsample_layers = up;
            c.hidden_layers = std::max<std::size_t>(up, 2);
            if ((image >> up) << up != image) continue;
            const MixtureDecoder<double> dec(c, 3, image, rng);
            CHECK(dec(random_tensor({1, 2, 3}, rng)).recon.shape() == Shape{1, 3, image, image});
        }
    }
    MixtureDecoderConfig bad;
    bad.upsample_layers = 4;
    CHECK_THROWS(bad.validate(24));
    bad.hidden_layers = 3;
    CHECK_THROWS(bad.validate(32));
}

TEST_CASE("reconstruction loss") {
    Rng rng(7);
    const T image = random_tensor({2, 3, 4, 4}, rng, 0, 1);
    CHECK(reconstruction_loss(image, image).item() == 0.0);
    CHECK(reconstruction_loss(T::zeros({1, 3, 4, 4}), T::full({1, 3, 4, 4}, 1.0)).item() == 1.0);
    const T other = random_tensor({2, 3, 4, 4}, rng, 0, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < image.numel(); ++i) acc += (image.at(i) - other.at(i)) * (image.at(i) - other.at(i));
    CHECK(std::abs(reconstruction_loss(image, other).item() - acc / 96.0) <= 1e-9);
    CHECK_THROWS_AS(reconstruction_loss(image, T::zeros({2, 3, 4, 5})), DimensionError);
}

TEST_CASE("reported mse conventions") {
    const T image = T::full({1, 3, 32, 32}, 0.5);
    CHECK(mse_report(image, image, MseConvention::per_pixel) == 0.0);
    CHECK(mse_report(image, image, MseConvention::slate_total) == 0.0);
    const T off = T::full({1, 3, 32, 32}, 0.6);
    CHECK(mse_report(off, image, MseConvention::per_pixel) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(mse_report(off, image, MseConvention::slate_total) == doctest::Approx(10.24).epsilon(1e-12));
    Rng rng(8);
    const T a = random_tensor({1, 3, 32, 32}, rng), b = random_tensor({1, 3, 32, 32}, rng);
    CHECK(mse_report(a, b, MseConvention::slate_total) == mse_report(a, b, MseConvention::per_pixel) * 1024.0);
}

TEST_CASE("model wiring: masks, recon and loss shapes") {
    ModelConfig c;
    c.image_size = 8;
    c.encoder = small_encoder(1);
    c.slots.num_slots = 3;
    c.slots.slot_dim = 6;
    c.slots.input_dim = 4;
    c.slots.mlp_hidden = 8;
    c.decoder = small_decoder();
    const Model<double> model(c, 9);
    Rng rng(10);
    const auto out = model.forward(random_tensor({2, 3, 8, 8}, rng, 0, 1), 0, rng);
    CHECK(out.decoded.masks.shape() == Shape{2, 3, 1, 8, 8});
    CHECK(out.state.attention.shape() == Shape{2, 64, 3});
    CHECK(std::isfinite(out.loss.item()));

    NamedTensors<double> params = model.parameters();
    std::set<std::string> names;
    for (const auto& [name, t] : params) names.insert(name);
    CHECK(names.size() == params.size());

    c.slots.input_dim = 5;
    CHECK_THROWS(Model<double>(c, 9));
}
