#include "figclip/encoders.hpp"

#include <cmath>
#include <mutex>
#include <sstream>

#include "figclip/errors.hpp"
#include "figclip/rng.hpp"

namespace figclip {

std::string TransformerEncoder::weight_name(size_t block, const std::string& type) const {
    const char* group = (type == "fc" || type == "proj") ? "mlp" : "attn";
    return prefix_ + ".block" + std::to_string(block) + "." + group + "." + type;
}

void TransformerEncoder::init_params(ParamStore& store, uint64_t seed, bool frozen, bool with_io) const {
    const size_t d = dims_.dim;
    const size_t hidden = d * dims_.mlp_ratio;
    auto gauss = [&](std::vector<size_t> shape, uint64_t stream) {
        Rng rng(derive_seed(seed, fnv1a64(prefix_.data(), prefix_.size()), stream));
        return Tensor::gaussian(std::move(shape), 0.02, rng);
    };
    if (with_io) {
        store.add(prefix_ + ".in_proj", gauss({d, dims_.input_dim}, 1), frozen);
        store.add(prefix_ + ".out_proj", gauss({d, d}, 2), frozen);
        store.add(prefix_ + ".ln_f.gamma", Tensor::full({d}, 1.0), frozen);
        store.add(prefix_ + ".ln_f.beta", Tensor::zeros({d}), frozen);
    }
    for (size_t b = 0; b < dims_.blocks; ++b) {
        const uint64_t base = 100 + b * 10;
        store.add(weight_name(b, "q"), gauss({d, d}, base + 0), frozen);
        store.add(weight_name(b, "k"), gauss({d, d}, base + 1), frozen);
        store.add(weight_name(b, "v"), gauss({d, d}, base + 2), frozen);
        store.add(weight_name(b, "o"), gauss({d, d}, base + 3), frozen);
        store.add(weight_name(b, "fc"), gauss({hidden, d}, base + 4), frozen);
        store.add(weight_name(b, "proj"), gauss({d, hidden}, base + 5), frozen);
        const std::string blk = prefix_ + ".block" + std::to_string(b);
        store.add(blk + ".ln1.gamma", Tensor::full({d}, 1.0), frozen);
        store.add(blk + ".ln1.beta", Tensor::zeros({d}), frozen);
        store.add(blk + ".ln2.gamma", Tensor::full({d}, 1.0), frozen);
        store.add(blk + ".ln2.beta", Tensor::zeros({d}), frozen);
    }
}

std::vector<AdaptableWeight> TransformerEncoder::adaptable_weights() const {
    std::vector<AdaptableWeight> out;
    const size_t d = dims_.dim;
    const size_t hidden = d * dims_.mlp_ratio;
    for (size_t b = 0; b < dims_.blocks; ++b) {
        for (const char* t : {"q", "k", "v", "o"}) out.push_back({weight_name(b, t), t, d, d});
        out.push_back({weight_name(b, "fc"), "fc", hidden, d});
        out.push_back({weight_name(b, "proj"), "proj", d, hidden});
    }
    return out;
}

NodeId TransformerEncoder::attention(TapeSession& s, NodeId x, size_t block, const AdapterSet* adapters) const {
    Tape& t = s.tape();
    const size_t d = dims_.dim;
    const size_t heads = dims_.heads;
    if (d % heads != 0) throw ShapeError("width " + std::to_string(d) + " not divisible by heads");
    const size_t hd = d / heads;

    auto lin = [&](NodeId in, const std::string& type) {
        const std::string name = weight_name(block, type);
        return lora_linear(s, in, name, adapters ? adapters->find(name) : nullptr);
    };
    NodeId q = lin(x, "q");
    NodeId k = lin(x, "k");
    NodeId v = lin(x, "v");

    std::vector<NodeId> head_outs;
    head_outs.reserve(heads);
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    for (size_t h = 0; h < heads; ++h) {
        NodeId qh = t.slice(q, 1, h * hd, hd);
        NodeId kh = t.slice(k, 1, h * hd, hd);
        NodeId vh = t.slice(v, 1, h * hd, hd);
        NodeId scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_hd);
        NodeId attn = t.softmax(scores, 1);
        head_outs.push_back(t.matmul(attn, vh));
    }
    NodeId merged = t.concat(head_outs, 1);
    return lin(merged, "o");
}

NodeId TransformerEncoder::forward_blocks(TapeSession& s, NodeId x, const AdapterSet* adapters) const {
    Tape& t = s.tape();
    for (size_t b = 0; b < dims_.blocks; ++b) {
        const std::string blk = prefix_ + ".block" + std::to_string(b);
        NodeId normed = t.layer_norm(x, s.param(blk + ".ln1.gamma"), s.param(blk + ".ln1.beta"));
        x = t.add(x, attention(s, normed, b, adapters));
        NodeId normed2 = t.layer_norm(x, s.param(blk + ".ln2.gamma"), s.param(blk + ".ln2.beta"));
        const std::string fc = weight_name(b, "fc");
        const std::string proj = weight_name(b, "proj");
        NodeId hidden = t.gelu(lora_linear(s, normed2, fc, adapters ? adapters->find(fc) : nullptr));
        NodeId mlp_out = lora_linear(s, hidden, proj, adapters ? adapters->find(proj) : nullptr);
        x = t.add(x, mlp_out);
    }
    return x;
}

NodeId TransformerEncoder::forward(TapeSession& s, NodeId tokens, const AdapterSet* adapters,
                                   bool normalize) const {
    Tape& t = s.tape();
    const Tensor& tv = t.value(tokens);
    if (tv.ndim() != 2 || tv.shape[1] != dims_.input_dim)
        throw ShapeError(prefix_ + " expects [n," + std::to_string(dims_.input_dim) + "] token grid, got " +
                         Tensor::shape_str(tv.shape));
    NodeId x = t.matmul(tokens, s.param_transposed(prefix_ + ".in_proj"));
    x = forward_blocks(s, x, adapters);
    x = t.layer_norm(x, s.param(prefix_ + ".ln_f.gamma"), s.param(prefix_ + ".ln_f.beta"));
    NodeId pooled = t.mean(x, 0);
    NodeId row = t.stack_rows({pooled});
    NodeId projected = t.matmul(row, s.param_transposed(prefix_ + ".out_proj"));
    NodeId vec = t.row(projected, 0);
    return normalize ? t.l2_normalize(vec, 0) : vec;
}

// ---- TextEncoder ----

Tensor TextEncoder::token_vector(const std::string& token, size_t dim) {
    Rng rng(mix64(fnv1a64(token.data(), token.size())));
    return Tensor::gaussian({dim}, 1.0, rng);
}

void TextEncoder::init_params(ParamStore& store, uint64_t seed) const {
    if (mode_ == Mode::hash_linear) {
        Rng rng(derive_seed(seed, 0x7e87u));
        store.add("text.proj", Tensor::gaussian({dims_.dim, dims_.dim}, 1.0 / std::sqrt(double(dims_.dim)), rng),
                  /*frozen=*/true);
    } else {
        tx_.init_params(store, seed, /*frozen=*/true);
    }
}

std::vector<AdaptableWeight> TextEncoder::adaptable_weights() const {
    if (mode_ == Mode::hash_linear) return {};
    return tx_.adaptable_weights();
}

Tensor TextEncoder::token_average(const std::string& text) const {
    std::istringstream ss(text);
    std::string tok;
    Tensor acc({dims_.dim});
    size_t count = 0;
    while (ss >> tok) {
        Tensor tv = token_vector(tok, dims_.dim);
        for (size_t i = 0; i < dims_.dim; ++i) acc.data[i] += tv.data[i];
        ++count;
    }
    if (count > 0)
        for (double& v : acc.data) v /= static_cast<double>(count);
    return acc;
}

Tensor TextEncoder::token_grid(const std::string& text) const {
    std::istringstream ss(text);
    std::string tok;
    std::vector<Tensor> rows;
    size_t pos = 0;
    while (ss >> tok) {
        Tensor tv = token_vector(tok, dims_.dim);
        Rng prng(derive_seed(0x705eU, pos));
        Tensor pv = Tensor::gaussian({dims_.dim}, 0.02, prng);
        for (size_t i = 0; i < dims_.dim; ++i) tv.data[i] += pv.data[i];
        rows.push_back(std::move(tv));
        ++pos;
    }
    if (rows.empty()) rows.push_back(Tensor::zeros({dims_.dim}));
    Tensor grid({rows.size(), dims_.dim});
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < dims_.dim; ++c) grid.data[r * dims_.dim + c] = rows[r].data[c];
    return grid;
}

Tensor TextEncoder::embed(const ParamStore& store, const std::string& text, bool normalize) const {
    const std::string key = (normalize ? "n:" : "r:") + text;
    if (mode_ == Mode::hash_linear) {
        {
            std::shared_lock lock(cache_mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        Tensor avg = token_average(text);
        const Tensor& W = store.get("text.proj").tensor;
        Tensor out({dims_.dim});
        for (size_t i = 0; i < dims_.dim; ++i) {
            double acc = 0.0;
            for (size_t j = 0; j < dims_.dim; ++j) acc += W.data[i * dims_.dim + j] * avg.data[j];
            out.data[i] = acc;
        }
        if (normalize) {
            double ss = 0.0;
            for (double v : out.data) ss += v * v;
            const double nrm = std::sqrt(ss);
            if (nrm > 0.0)
                for (double& v : out.data) v /= nrm;
        }
        std::unique_lock lock(cache_mutex_);
        cache_[key] = out;  // last writer wins; identical values either way
        return out;
    }
    // Transformer mode has no cache; a non-tape call runs a throwaway session
    // against a const store.
    TapeSession s(const_cast<ParamStore&>(store), Precision::f64, /*grad_enabled=*/false);
    NodeId out = embed_node(s, text, nullptr, normalize);
    return s.tape().value(out);
}

NodeId TextEncoder::embed_node(TapeSession& s, const std::string& text, const AdapterSet* adapters,
                               bool normalize) const {
    if (mode_ == Mode::hash_linear) {
        return s.tape().constant(embed(s.store(), text, normalize));
    }
    NodeId grid = s.tape().constant(token_grid(text));
    return tx_.forward(s, grid, adapters, normalize);
}

void TextEncoder::clear_cache() const {
    std::unique_lock lock(cache_mutex_);
    cache_.clear();
}

// ---- FrameSource ----

Tensor FrameSource::grid(const FrameRef& ref) const {
    if (ref.is_embedding_row()) {
        if (!matrix_) throw MissingEmbedding("frame ref " + ref.raw + " but no embedding matrix attached");
        const size_t row = ref.embedding_row();
        if (row >= matrix_->rows())
            throw MissingEmbedding("frame ref " + ref.raw + " out of range (matrix has " +
                                   std::to_string(matrix_->rows()) + " rows)");
        Tensor t = matrix_->row_grid(row, tokens_);
        if (t.shape[1] != input_dim_)
            throw ShapeError("frame row reshapes to input dim " + std::to_string(t.shape[1]) + ", expected " +
                             std::to_string(input_dim_));
        return t;
    }
    {
        std::shared_lock lock(file_mutex_);
        auto it = file_cache_.find(ref.raw);
        if (it != file_cache_.end()) {
            const EmbeddingMatrix& m = it->second;
            Tensor t({m.rows(), m.dim()});
            for (size_t r = 0; r < m.rows(); ++r)
                for (size_t c = 0; c < m.dim(); ++c) t.data[r * m.dim() + c] = m.row(r)[c];
            return t;
        }
    }
    EmbeddingMatrix m = EmbeddingMatrix::load(ref.raw);
    if (m.rows() != tokens_ || m.dim() != input_dim_)
        throw ShapeError("frame file " + ref.raw + " is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.dim()) + ", expected " + std::to_string(tokens_) + "x" +
                         std::to_string(input_dim_));
    Tensor t({m.rows(), m.dim()});
    for (size_t r = 0; r < m.rows(); ++r)
        for (size_t c = 0; c < m.dim(); ++c) t.data[r * m.dim() + c] = m.row(r)[c];
    std::unique_lock lock(file_mutex_);
    file_cache_.emplace(ref.raw, std::move(m));
    return t;
}

}  // namespace figclip
