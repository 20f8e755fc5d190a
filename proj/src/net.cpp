#include "ofnet/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "ofnet/kern.hpp"

namespace ofnet {

// ---------- ParamStore ----------

int ParamStore::add(const std::string& name, int rows, int cols,
                    double init_scale, std::uint64_t rng_seed, bool trainable) {
    names_.push_back(name);
    rows_.push_back(rows);
    cols_.push_back(cols);
    trainable_.push_back(trainable ? 1 : 0);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols, 0.0);
    if (init_scale > 0.0) {
        std::mt19937_64 rng(rng_seed);
        std::uniform_real_distribution<double> d(-init_scale, init_scale);
        for (double& x : v) x = d(rng);
    }
    grads_.emplace_back(v.size(), 0.0);
    vel_.emplace_back(v.size(), 0.0);
    vals_.push_back(std::move(v));
    return n_blocks() - 1;
}

int ParamStore::find(const std::string& name) const {
    for (int i = 0; i < n_blocks(); ++i)
        if (names_[i] == name) return i;
    return -1;
}

void ParamStore::zero_grads() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void ParamStore::clip_grads(double max_norm) {
    double ss = 0.0;
    for (const auto& g : grads_)
        for (double v : g) ss += v * v;
    double n = std::sqrt(ss);
    if (n <= max_norm || n == 0.0) return;
    double s = max_norm / n;
    for (auto& g : grads_)
        for (double& v : g) v *= s;
}

void ParamStore::sgd_step(double lr, double momentum) {
    for (int b = 0; b < n_blocks(); ++b) {
        if (!trainable_[b]) continue;
        auto& v = vel_[b];
        auto& w = vals_[b];
        auto& g = grads_[b];
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] - lr * g[i];
            w[i] += v[i];
        }
    }
    zero_grads();
}

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const auto& v : vals_) n += v.size();
    return n;
}

// ---------- Tape ----------

int Tape::push(std::vector<double> v, std::function<void()> back) {
    nodes_.push_back({std::move(v), {}, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(std::vector<double> v) { return push(std::move(v)); }

int Tape::param(int block) {
    int id = push(ps_->values(block));
    param_nodes_.push_back({id, block});
    return id;
}

int Tape::linear(int w, int b, int x) {
    const auto& W = nodes_[w].val;
    const auto& B = nodes_[b].val;
    const auto& X = nodes_[x].val;
    std::size_t m = B.size(), n = X.size();
    if (W.size() != m * n) throw std::invalid_argument("linear: shape mismatch");
    std::vector<double> y(m);
    kern::active().matvec(W.data(), X.data(), y.data(), m, n);
    for (std::size_t i = 0; i < m; ++i) y[i] += B[i];
    int id = push(std::move(y), {});
    nodes_[id].back = [this, id, w, b, x, m, n] {
        const auto& gy = nodes_[id].grad;
        // dX += W^T gy
        std::vector<double> gx(n, 0.0);
        kern::active().matvec_t(nodes_[w].val.data(), gy.data(), gx.data(), m, n);
        for (std::size_t i = 0; i < n; ++i) nodes_[x].grad[i] += gx[i];
        // dW += gy X^T
        kern::active().ger(gy.data(), nodes_[x].val.data(), nodes_[w].grad.data(),
                           m, n);
        // dB += gy
        kern::active().axpy(1.0, gy.data(), nodes_[b].grad.data(), m);
    };
    return id;
}

int Tape::tanh_(int x) {
    std::vector<double> y = nodes_[x].val;
    for (double& v : y) v = std::tanh(v);
    int id = push(std::move(y));
    nodes_[id].back = [this, id, x] {
        const auto& y = nodes_[id].val;
        const auto& gy = nodes_[id].grad;
        auto& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < y.size(); ++i)
            gx[i] += gy[i] * (1.0 - y[i] * y[i]);
    };
    return id;
}

int Tape::sigmoid_(int x) {
    std::vector<double> y = nodes_[x].val;
    for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
    int id = push(std::move(y));
    nodes_[id].back = [this, id, x] {
        const auto& y = nodes_[id].val;
        const auto& gy = nodes_[id].grad;
        auto& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < y.size(); ++i)
            gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    };
    return id;
}

int Tape::add(int x, int y) {
    std::vector<double> v = nodes_[x].val;
    kern::active().axpy(1.0, nodes_[y].val.data(), v.data(), v.size());
    int id = push(std::move(v));
    nodes_[id].back = [this, id, x, y] {
        const auto& g = nodes_[id].grad;
        kern::active().axpy(1.0, g.data(), nodes_[x].grad.data(), g.size());
        kern::active().axpy(1.0, g.data(), nodes_[y].grad.data(), g.size());
    };
    return id;
}

int Tape::sub(int x, int y) {
    std::vector<double> v = nodes_[x].val;
    kern::active().axpy(-1.0, nodes_[y].val.data(), v.data(), v.size());
    int id = push(std::move(v));
    nodes_[id].back = [this, id, x, y] {
        const auto& g = nodes_[id].grad;
        kern::active().axpy(1.0, g.data(), nodes_[x].grad.data(), g.size());
        kern::active().axpy(-1.0, g.data(), nodes_[y].grad.data(), g.size());
    };
    return id;
}

int Tape::scale(int x, double c) {
    std::vector<double> v = nodes_[x].val;
    for (double& a : v) a *= c;
    int id = push(std::move(v));
    nodes_[id].back = [this, id, x, c] {
        kern::active().axpy(c, nodes_[id].grad.data(), nodes_[x].grad.data(),
                            nodes_[id].grad.size());
    };
    return id;
}

int Tape::mul(int x, int y) {
    const auto& a = nodes_[x].val;
    const auto& b = nodes_[y].val;
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] * b[i];
    int id = push(std::move(v));
    nodes_[id].back = [this, id, x, y] {
        const auto& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            nodes_[x].grad[i] += g[i] * nodes_[y].val[i];
            nodes_[y].grad[i] += g[i] * nodes_[x].val[i];
        }
    };
    return id;
}

int Tape::smul(int s, int x) {
    double c = nodes_[s].val[0];
    std::vector<double> v = nodes_[x].val;
    for (double& a : v) a *= c;
    int id = push(std::move(v));
    nodes_[id].back = [this, id, s, x] {
        const auto& g = nodes_[id].grad;
        nodes_[s].grad[0] += kern::active().dot(g.data(), nodes_[x].val.data(),
                                                g.size());
        kern::active().axpy(nodes_[s].val[0], g.data(), nodes_[x].grad.data(),
                            g.size());
    };
    return id;
}

int Tape::dot(int x, int y) {
    double d = kern::active().dot(nodes_[x].val.data(), nodes_[y].val.data(),
                                  nodes_[x].val.size());
    int id = push({d});
    nodes_[id].back = [this, id, x, y] {
        double g = nodes_[id].grad[0];
        kern::active().axpy(g, nodes_[y].val.data(), nodes_[x].grad.data(),
                            nodes_[x].val.size());
        kern::active().axpy(g, nodes_[x].val.data(), nodes_[y].grad.data(),
                            nodes_[x].val.size());
    };
    return id;
}

int Tape::concat(const std::vector<int>& xs) {
    std::vector<double> v;
    for (int x : xs) {
        const auto& a = nodes_[x].val;
        v.insert(v.end(), a.begin(), a.end());
    }
    int id = push(std::move(v));
    nodes_[id].back = [this, id, xs] {
        const auto& g = nodes_[id].grad;
        std::size_t off = 0;
        for (int x : xs) {
            auto& gx = nodes_[x].grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[off + i];
            off += gx.size();
        }
    };
    return id;
}

int Tape::slice(int x, int offset, int len) {
    const auto& a = nodes_[x].val;
    std::vector<double> v(a.begin() + offset, a.begin() + offset + len);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, x, offset, len] {
        const auto& g = nodes_[id].grad;
        for (int i = 0; i < len; ++i) nodes_[x].grad[offset + i] += g[i];
    };
    return id;
}

int Tape::softmax_(int x) {
    std::vector<double> y = nodes_[x].val;
    double mx = *std::max_element(y.begin(), y.end());
    double s = 0.0;
    for (double& v : y) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : y) v /= s;
    int id = push(std::move(y));
    nodes_[id].back = [this, id, x] {
        const auto& y = nodes_[id].val;
        const auto& gy = nodes_[id].grad;
        double gdoty = kern::active().dot(gy.data(), y.data(), y.size());
        auto& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < y.size(); ++i)
            gx[i] += y[i] * (gy[i] - gdoty);
    };
    return id;
}

int Tape::sum(int x) {
    double s = 0.0;
    for (double v : nodes_[x].val) s += v;
    int id = push({s});
    nodes_[id].back = [this, id, x] {
        double g = nodes_[id].grad[0];
        for (double& gi : nodes_[x].grad) gi += g;
    };
    return id;
}

int Tape::mse(int pred, const std::vector<double>& target) {
    const auto& p = nodes_[pred].val;
    if (p.size() != target.size()) throw std::invalid_argument("mse: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double r = p[i] - target[i];
        s += r * r;
    }
    s /= static_cast<double>(p.size());
    int id = push({s});
    nodes_[id].back = [this, id, pred, target] {
        double g = nodes_[id].grad[0] * 2.0 / static_cast<double>(target.size());
        const auto& p = nodes_[pred].val;
        auto& gp = nodes_[pred].grad;
        for (std::size_t i = 0; i < p.size(); ++i)
            gp[i] += g * (p[i] - target[i]);
    };
    return id;
}

int Tape::bce_logits(int logits, const std::vector<double>& target) {
    const auto& z = nodes_[logits].val;
    if (z.size() != target.size())
        throw std::invalid_argument("bce_logits: size mismatch");
    // stable: max(z,0) - z*t + log(1+exp(-|z|))
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        s += std::max(z[i], 0.0) - z[i] * target[i] +
             std::log1p(std::exp(-std::abs(z[i])));
    s /= static_cast<double>(z.size());
    int id = push({s});
    nodes_[id].back = [this, id, logits, target] {
        double g = nodes_[id].grad[0] / static_cast<double>(target.size());
        const auto& z = nodes_[logits].val;
        auto& gz = nodes_[logits].grad;
        for (std::size_t i = 0; i < z.size(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-z[i]));
            gz[i] += g * (sig - target[i]);
        }
    };
    return id;
}

void Tape::backward(int root) {
    if (nodes_[root].val.size() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    nodes_[root].grad[0] = 1.0;
    for (int i = root; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back();
    for (auto& [id, block] : param_nodes_) {
        if (!ps_->trainable(block)) continue;  // frozen: gradient stays zero
        auto& dst = ps_->grads(block);
        const auto& src = nodes_[id].grad;
        kern::active().axpy(1.0, src.data(), dst.data(), dst.size());
    }
}

// ---------- DenseNet ----------

namespace {

double init_scale_for(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::uint64_t block_seed(std::uint64_t model_seed, std::uint64_t counter) {
    return model_seed * 0x9E3779B97F4A7C15ULL + counter * 0xBF58476D1CE4E5B9ULL + 1;
}

struct Builder {
    ParamStore& ps;
    std::uint64_t seed;
    std::uint64_t counter = 0;
    int mat(const std::string& name, int rows, int cols) {
        return ps.add(name, rows, cols, init_scale_for(cols),
                      block_seed(seed, ++counter));
    }
    int bias(const std::string& name, int rows) {
        return ps.add(name, rows, 1, 0.0, 0);
    }
};

DenseNet build_dense(Builder& b, const std::string& prefix, NetSpec spec) {
    DenseNet net;
    net.spec = spec;
    int cur = spec.in;
    int s = 0, r = 0, layer = 0;
    auto push_single = [&] {
        std::string n = prefix + ".s" + std::to_string(layer++);
        net.blocks.push_back(b.mat(n + ".W", spec.hidden, cur));
        net.blocks.push_back(b.bias(n + ".b", spec.hidden));
        cur = spec.hidden;
    };
    auto push_res = [&] {
        std::string n = prefix + ".r" + std::to_string(layer++);
        net.blocks.push_back(b.mat(n + ".W1", spec.hidden, cur));
        net.blocks.push_back(b.bias(n + ".b1", spec.hidden));
        net.blocks.push_back(b.mat(n + ".W2", spec.hidden, spec.hidden));
        net.blocks.push_back(b.bias(n + ".b2", spec.hidden));
    };
    // alternate starting with a single layer; the first single also maps the
    // input width up to the hidden width
    while (s < spec.singles || r < spec.res_blocks) {
        if (s < spec.singles) {
            push_single();
            ++s;
        }
        if (r < spec.res_blocks) {
            if (cur != spec.hidden) push_single(), ++s;  // width guard
            push_res();
            ++r;
        }
    }
    net.blocks.push_back(b.mat(prefix + ".out.W", spec.out, cur));
    net.blocks.push_back(b.bias(prefix + ".out.b", spec.out));
    // linear skip from the input: keeps exactly-linear targets reachable
    net.blocks.push_back(b.mat(prefix + ".skip.W", spec.out, spec.in));
    return net;
}

}  // namespace

int DenseNet::forward(Tape& t, int x) const {
    int cur = x;
    std::size_t i = 0;
    int s = 0, r = 0;
    int singles = spec.singles, res = spec.res_blocks;
    // replay the same alternation used at build time
    auto single = [&] {
        int W = t.param(blocks[i]), B = t.param(blocks[i + 1]);
        i += 2;
        cur = t.tanh_(t.linear(W, B, cur));
    };
    auto resblock = [&] {
        int W1 = t.param(blocks[i]), B1 = t.param(blocks[i + 1]);
        int W2 = t.param(blocks[i + 2]), B2 = t.param(blocks[i + 3]);
        i += 4;
        int h = t.tanh_(t.linear(W1, B1, cur));
        cur = t.add(cur, t.linear(W2, B2, h));
    };
    int width = spec.in;
    while (s < singles || r < res) {
        if (s < singles) {
            single();
            ++s;
            width = spec.hidden;
        }
        if (r < res) {
            if (width != spec.hidden) {
                single();
                ++s;
                width = spec.hidden;
            }
            resblock();
            ++r;
        }
    }
    int Wo = t.param(blocks[i]), Bo = t.param(blocks[i + 1]);
    int Ws = t.param(blocks[i + 2]);
    int zero = t.leaf(std::vector<double>(spec.out, 0.0));
    return t.add(t.linear(Wo, Bo, cur), t.linear(Ws, zero, x));
}

// ---------- Model assembly ----------

std::vector<double> position_encoding(double x1, double x2) {
    return {x1, x2, x1 * x1, x2 * x2, x1 * x2, x1 * x1 * x1, x2 * x2 * x2};
}

Model make_model(const HyperParams& hp) {
    Model m;
    m.hp = hp;
    Builder b{m.params, hp.seed};

    NetSpec trunk_spec{7, hp.hidden, hp.opfeat_dim, 2, 1};
    m.trunk = build_dense(b, "trunk", trunk_spec);

    for (int k = 1; k <= kNumKinds; ++k) {
        NetSpec es{hp.branch_samples, hp.hidden, hp.opfeat_dim, 1, 1};
        m.encoders.push_back(
            build_dense(b, "enc." + std::string(kind_info(static_cast<Kind>(k)).name), es));
    }

    for (int h = 0; h < hp.decoder_heads; ++h) {
        std::string n = "dec.h" + std::to_string(h);
        m.decoder_blocks.push_back(b.mat(n + ".W", hp.opfeat_dim, hp.opfeat_dim));
        m.decoder_blocks.push_back(b.bias(n + ".b", hp.opfeat_dim));
    }

    int d = hp.opfeat_dim;
    const int nq = 4;  // pooling queries
    m.setenc_blocks.push_back(b.mat("setenc.embed.W", d, d + 1));
    m.setenc_blocks.push_back(b.bias("setenc.embed.b", d));
    m.setenc_blocks.push_back(b.mat("setenc.embed2.W", d, d));
    m.setenc_blocks.push_back(b.bias("setenc.embed2.b", d));
    m.setenc_blocks.push_back(b.mat("setenc.q", nq, d));
    m.setenc_blocks.push_back(b.mat("setenc.K", d, d));
    m.setenc_blocks.push_back(b.mat("setenc.V", d, d));
    m.setenc_blocks.push_back(b.mat("setenc.out.W", hp.numfeat_dim, (nq + 1) * d));
    m.setenc_blocks.push_back(b.bias("setenc.out.b", hp.numfeat_dim));

    NetSpec inv_spec{hp.numfeat_dim, hp.hidden, hp.opfeat_dim, 1, 1};
    m.inverse = build_dense(b, "inverse", inv_spec);

    m.judge_blocks.push_back(b.mat("judge.proj.W", d, d));
    m.judge_blocks.push_back(b.bias("judge.proj.b", d));
    for (int l = 0; l < hp.attn_layers; ++l) {
        std::string n = "judge.attn" + std::to_string(l);
        m.judge_blocks.push_back(b.mat(n + ".Q", d, d));
        m.judge_blocks.push_back(b.mat(n + ".K", d, d));
        m.judge_blocks.push_back(b.mat(n + ".V", d, d));
        m.judge_blocks.push_back(b.mat(n + ".F1", d, d));
        m.judge_blocks.push_back(b.bias(n + ".f1b", d));
        m.judge_blocks.push_back(b.mat(n + ".F2", d, d));
        m.judge_blocks.push_back(b.bias(n + ".f2b", d));
    }
    m.judge_blocks.push_back(b.mat("judge.row.W", kNumKinds + 2, d));
    m.judge_blocks.push_back(b.bias("judge.row.b", kNumKinds + 2));
    return m;
}

// ---------- tape-level forwards ----------

int trunk_forward(const Model& m, Tape& t, double x1, double x2) {
    return m.trunk.forward(t, t.leaf(position_encoding(x1, x2)));
}

int encoder_forward(const Model& m, Tape& t, Kind k, int fn_samples) {
    return m.encoders[static_cast<int>(k) - 1].forward(t, fn_samples);
}

int decoder_forward(const Model& m, Tape& t, int opfeat) {
    int acc = -1;
    for (int h = 0; h < m.hp.decoder_heads; ++h) {
        int W = t.param(m.decoder_blocks[2 * h]);
        int B = t.param(m.decoder_blocks[2 * h + 1]);
        int y = t.tanh_(t.linear(W, B, opfeat));
        acc = h == 0 ? y : t.add(acc, y);
    }
    return acc;
}

int setenc_forward(const Model& m, Tape& t, const std::vector<int>& pos_feats,
                   const std::vector<double>& values) {
    if (pos_feats.empty() || pos_feats.size() != values.size())
        throw std::invalid_argument("setenc_forward: empty or mismatched sample set");
    int We = t.param(m.setenc_blocks[0]), be = t.param(m.setenc_blocks[1]);
    int We2 = t.param(m.setenc_blocks[2]), be2 = t.param(m.setenc_blocks[3]);
    int q = t.param(m.setenc_blocks[4]);
    int K = t.param(m.setenc_blocks[5]);
    int V = t.param(m.setenc_blocks[6]);
    int Wo = t.param(m.setenc_blocks[7]), bo = t.param(m.setenc_blocks[8]);

    const int d = m.hp.opfeat_dim;
    const int nq = 4;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<int> keys, vals, embeds;
    int zero_bias = t.leaf(std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < pos_feats.size(); ++i) {
        // first embed layer kept linear: raw values can exceed tanh's range
        int e = t.linear(We, be, t.concat({pos_feats[i], t.leaf({values[i]})}));
        e = t.tanh_(t.linear(We2, be2, e));
        embeds.push_back(e);
        keys.push_back(t.linear(K, zero_bias, e));
        vals.push_back(t.linear(V, zero_bias, e));
    }
    std::vector<int> pooled_parts;
    for (int j = 0; j < nq; ++j) {
        int qj = t.slice(q, j * d, d);
        std::vector<int> scores;
        for (std::size_t i = 0; i < keys.size(); ++i)
            scores.push_back(t.scale(t.dot(qj, keys[i]), inv_sqrt));
        int attn = t.softmax_(t.concat(scores));
        int pooled = -1;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            int wi = t.smul(t.slice(attn, static_cast<int>(i), 1), vals[i]);
            pooled = i == 0 ? wi : t.add(pooled, wi);
        }
        pooled_parts.push_back(pooled);
    }
    // order-independent mean of the embeddings as a direct moment path
    int mean = embeds[0];
    for (std::size_t i = 1; i < embeds.size(); ++i) mean = t.add(mean, embeds[i]);
    pooled_parts.push_back(t.scale(mean, 1.0 / static_cast<double>(embeds.size())));
    return t.tanh_(t.linear(Wo, bo, t.concat(pooled_parts)));
}

namespace {

// single-head self-attention layer with residual links and a tanh FFN
std::vector<int> attention_layer(Tape& t, const std::vector<int>& tokens,
                                 int Q, int K, int V, int F1, int f1b, int F2,
                                 int f2b, int dim) {
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dim));
    int zero_bias = t.leaf(std::vector<double>(dim, 0.0));
    std::vector<int> qs, ks, vs;
    for (int tok : tokens) {
        qs.push_back(t.linear(Q, zero_bias, tok));
        ks.push_back(t.linear(K, zero_bias, tok));
        vs.push_back(t.linear(V, zero_bias, tok));
    }
    std::vector<int> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::vector<int> scores;
        for (std::size_t j = 0; j < tokens.size(); ++j)
            scores.push_back(t.scale(t.dot(qs[i], ks[j]), inv_sqrt));
        int attn = t.softmax_(t.concat(scores));
        int mix = -1;
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            int w = t.smul(t.slice(attn, static_cast<int>(j), 1), vs[j]);
            mix = j == 0 ? w : t.add(mix, w);
        }
        int res = t.add(tokens[i], mix);
        int ffn = t.linear(F2, f2b, t.tanh_(t.linear(F1, f1b, res)));
        out.push_back(t.add(res, ffn));
    }
    return out;
}

}  // namespace

int judge_forward(const Model& m, Tape& t, const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) != kNumKinds + 1)
        throw std::invalid_argument("judge_forward: expected 12 tokens");
    int d = m.hp.opfeat_dim;
    std::size_t i = 0;
    int Wp = t.param(m.judge_blocks[i]), bp = t.param(m.judge_blocks[i + 1]);
    i += 2;
    std::vector<int> cur;
    for (int tok : tokens) cur.push_back(t.tanh_(t.linear(Wp, bp, tok)));
    for (int l = 0; l < m.hp.attn_layers; ++l) {
        int Q = t.param(m.judge_blocks[i]), K = t.param(m.judge_blocks[i + 1]);
        int V = t.param(m.judge_blocks[i + 2]);
        int F1 = t.param(m.judge_blocks[i + 3]), f1b = t.param(m.judge_blocks[i + 4]);
        int F2 = t.param(m.judge_blocks[i + 5]), f2b = t.param(m.judge_blocks[i + 6]);
        i += 7;
        cur = attention_layer(t, cur, Q, K, V, F1, f1b, F2, f2b, d);
    }
    int Wr = t.param(m.judge_blocks[i]), br = t.param(m.judge_blocks[i + 1]);
    // one logit row of 13 per operator-kind token (the target token carries
    // no row; variable rows are structurally zero and added outside)
    std::vector<int> rows;
    for (int k = 0; k < kNumKinds; ++k) rows.push_back(t.linear(Wr, br, cur[k]));
    return t.concat(rows);  // 11 x 13 logits, row-major
}

// ---------- inference wrappers ----------

std::vector<double> trunk_features(const Model& m, double x1, double x2) {
    Tape t(const_cast<ParamStore*>(&m.params));
    return t.val(trunk_forward(m, t, x1, x2));
}

std::vector<double> extract_operator_feature(const Model& m, Kind k,
                                             const std::vector<double>& fn_samples) {
    if (static_cast<int>(fn_samples.size()) != m.hp.branch_samples)
        throw std::invalid_argument("fn_samples length must match branch sample count");
    Tape t(const_cast<ParamStore*>(&m.params));
    return t.val(encoder_forward(m, t, k, t.leaf(fn_samples)));
}

std::vector<double> deeponet_forward(const Model& m, Kind k,
                                     const std::vector<double>& fn_samples,
                                     const std::vector<std::pair<double, double>>& positions) {
    if (static_cast<int>(fn_samples.size()) != m.hp.branch_samples)
        throw std::invalid_argument("fn_samples length must match branch sample count");
    Tape t(const_cast<ParamStore*>(&m.params));
    int branch = decoder_forward(m, t, encoder_forward(m, t, k, t.leaf(fn_samples)));
    std::vector<double> out;
    for (const auto& p : positions)
        out.push_back(t.val(t.dot(branch, trunk_forward(m, t, p.first, p.second)))[0]);
    return out;
}

std::vector<double> numerical_decode(const Model& m,
                                     const std::vector<std::pair<double, double>>& positions,
                                     const std::vector<double>& values) {
    Tape t(const_cast<ParamStore*>(&m.params));
    std::vector<int> pf;
    for (const auto& p : positions)
        pf.push_back(t.leaf(trunk_features(m, p.first, p.second)));
    return t.val(setenc_forward(m, t, pf, values));
}

std::vector<double> invert_feature(const Model& m, const std::vector<double>& numfeat) {
    if (static_cast<int>(numfeat.size()) != m.hp.numfeat_dim)
        throw std::invalid_argument("numfeat dimension mismatch");
    Tape t(const_cast<ParamStore*>(&m.params));
    return t.val(m.inverse.forward(t, t.leaf(numfeat)));
}

std::vector<std::vector<double>> judge_adjacency(const Model& m,
                                                 const std::vector<std::vector<double>>& basic,
                                                 const std::vector<double>& target) {
    if (static_cast<int>(basic.size()) != kNumKinds)
        throw std::invalid_argument("need one basic feature per operator kind");
    for (const auto& f : basic)
        if (static_cast<int>(f.size()) != m.hp.opfeat_dim)
            throw std::invalid_argument("basic feature dimension mismatch");
    if (static_cast<int>(target.size()) != m.hp.opfeat_dim)
        throw std::invalid_argument("target feature dimension mismatch");
    Tape t(const_cast<ParamStore*>(&m.params));
    std::vector<int> tokens;
    for (const auto& f : basic) tokens.push_back(t.leaf(f));
    tokens.push_back(t.leaf(target));
    int logits = judge_forward(m, t, tokens);
    const auto& z = t.val(t.sigmoid_(logits));
    int n = kNumKinds + 2;
    std::vector<std::vector<double>> probs(n, std::vector<double>(n, 0.0));
    for (int r = 0; r < kNumKinds; ++r)
        for (int c = 0; c < n; ++c) probs[r][c] = z[r * n + c];
    return probs;  // variable rows stay zero
}

AdjacencyMatrix binarize(const std::vector<std::vector<double>>& probs,
                         double threshold) {
    int n = static_cast<int>(probs.size());
    AdjacencyMatrix m(n - kNumKinds);
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            if (probs[x][y] > threshold) m.set(x, y, true);
    return m;
}

std::vector<double> probe_samples(const HyperParams& hp) {
    // fixed smooth probe on the shared branch grid
    std::vector<double> s(hp.branch_samples);
    for (int i = 0; i < hp.branch_samples; ++i) {
        double x = -1.0 + 2.0 * i / (hp.branch_samples - 1);
        s[i] = 0.6 + 0.4 * x + 0.3 * x * x + 0.2 * std::sin(3.0 * x);
    }
    return s;
}

std::vector<std::vector<double>> basic_features(const Model& m) {
    auto probe = probe_samples(m.hp);
    std::vector<std::vector<double>> out;
    for (int k = 1; k <= kNumKinds; ++k)
        out.push_back(extract_operator_feature(m, static_cast<Kind>(k), probe));
    return out;
}

// ---------- gradient check ----------

namespace {

// scalar losses exercising each block family with fixed pseudo-random inputs
double probe_loss(Model& m, const std::string& selector, std::uint64_t seed,
                  bool do_backward) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Tape t(&m.params);
    std::vector<int> pieces;
    if (selector == "trunk" || selector == "all")
        pieces.push_back(t.sum(t.mul(trunk_forward(m, t, 0.37, -0.21),
                                     trunk_forward(m, t, 0.37, -0.21))));
    if (selector == "encoder" || selector == "decoder" || selector == "all") {
        std::vector<double> fn(m.hp.branch_samples);
        for (double& v : fn) v = d(rng);
        int enc = encoder_forward(m, t, Kind::Sin, t.leaf(fn));
        int dec = decoder_forward(m, t, enc);
        pieces.push_back(t.sum(t.mul(dec, dec)));
    }
    if (selector == "setenc" || selector == "all") {
        std::vector<int> pf;
        std::vector<double> vals;
        for (int i = 0; i < 6; ++i) {
            std::vector<double> f(m.hp.opfeat_dim);
            for (double& v : f) v = d(rng);
            pf.push_back(t.leaf(f));
            vals.push_back(d(rng));
        }
        int nf = setenc_forward(m, t, pf, vals);
        pieces.push_back(t.sum(t.mul(nf, nf)));
    }
    if (selector == "inverse" || selector == "all") {
        std::vector<double> nf(m.hp.numfeat_dim);
        for (double& v : nf) v = d(rng);
        int of = m.inverse.forward(t, t.leaf(nf));
        pieces.push_back(t.sum(t.mul(of, of)));
    }
    if (selector == "judge" || selector == "all") {
        std::vector<int> tokens;
        for (int i = 0; i < kNumKinds + 1; ++i) {
            std::vector<double> f(m.hp.opfeat_dim);
            for (double& v : f) v = d(rng);
            tokens.push_back(t.leaf(f));
        }
        std::vector<double> target((kNumKinds) * (kNumKinds + 2), 0.0);
        for (double& v : target) v = d(rng) > 0 ? 1.0 : 0.0;
        pieces.push_back(t.bce_logits(judge_forward(m, t, tokens), target));
    }
    if (pieces.empty()) throw std::invalid_argument("unknown block selector");
    int loss = pieces[0];
    for (std::size_t i = 1; i < pieces.size(); ++i) loss = t.add(loss, pieces[i]);
    double v = t.val(loss)[0];
    if (do_backward) t.backward(loss);
    return v;
}

bool block_selected(const Model& m, int b, const std::string& selector) {
    if (selector == "all") return true;
    const std::string& n = m.params.name(b);
    if (selector == "encoder") return n.rfind("enc.", 0) == 0;
    if (selector == "decoder") return n.rfind("dec.", 0) == 0;
    return n.rfind(selector, 0) == 0;
}

}  // namespace

double gradient_check(Model& m, const std::string& selector, std::uint64_t seed) {
    m.params.zero_grads();
    probe_loss(m, selector, seed, true);
    // snapshot analytic gradients
    std::vector<std::vector<double>> g;
    for (int b = 0; b < m.params.n_blocks(); ++b) g.push_back(m.params.grads(b));
    m.params.zero_grads();

    std::mt19937_64 rng(seed ^ 0xABCDEF12345ULL);
    std::vector<std::pair<int, int>> picks;
    for (int b = 0; b < m.params.n_blocks(); ++b) {
        if (!block_selected(m, b, selector) || !m.params.trainable(b)) continue;
        for (int i = 0; i < static_cast<int>(m.params.values(b).size()); ++i)
            picks.push_back({b, i});
    }
    std::shuffle(picks.begin(), picks.end(), rng);
    if (picks.size() > 200) picks.resize(200);

    const double h = 1e-5;
    double max_rel = 0.0;
    for (auto [b, i] : picks) {
        double& w = m.params.values(b)[i];
        double w0 = w;
        w = w0 + h;
        double fp = probe_loss(m, selector, seed, false);
        w = w0 - h;
        double fm = probe_loss(m, selector, seed, false);
        w = w0;
        double fd = (fp - fm) / (2.0 * h);
        double an = g[b][i];
        double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---------- checkpoint ----------

namespace {
constexpr char kMagic[8] = {'O', 'F', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
double get_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(kMagic, sizeof kMagic);
    const HyperParams& h = m.hp;
    for (int v : {h.opfeat_dim, h.numfeat_dim, h.branch_samples, h.trunk_positions,
                  h.hidden, h.decoder_heads, h.attn_layers, h.forward_steps,
                  h.backward_steps, h.judgment_steps, h.corpus_size})
        put_u64(os, static_cast<std::uint64_t>(v));
    put_f64(os, h.lr);
    put_f64(os, h.momentum);
    put_u64(os, h.seed);
    put_u64(os, static_cast<std::uint64_t>(m.params.n_blocks()));
    for (int b = 0; b < m.params.n_blocks(); ++b) {
        const std::string& n = m.params.name(b);
        put_u64(os, n.size());
        os.write(n.data(), static_cast<std::streamsize>(n.size()));
        put_u64(os, static_cast<std::uint64_t>(m.params.rows(b)));
        put_u64(os, static_cast<std::uint64_t>(m.params.cols(b)));
        put_u64(os, m.params.trainable(b) ? 1 : 0);
        const auto& v = m.params.values(b);
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    HyperParams h;
    h.opfeat_dim = static_cast<int>(get_u64(is));
    h.numfeat_dim = static_cast<int>(get_u64(is));
    h.branch_samples = static_cast<int>(get_u64(is));
    h.trunk_positions = static_cast<int>(get_u64(is));
    h.hidden = static_cast<int>(get_u64(is));
    h.decoder_heads = static_cast<int>(get_u64(is));
    h.attn_layers = static_cast<int>(get_u64(is));
    h.forward_steps = static_cast<int>(get_u64(is));
    h.backward_steps = static_cast<int>(get_u64(is));
    h.judgment_steps = static_cast<int>(get_u64(is));
    h.corpus_size = static_cast<int>(get_u64(is));
    h.lr = get_f64(is);
    h.momentum = get_f64(is);
    h.seed = get_u64(is);
    Model m = make_model(h);
    std::uint64_t nb = get_u64(is);
    if (nb != static_cast<std::uint64_t>(m.params.n_blocks()))
        throw std::runtime_error("checkpoint block count mismatch");
    for (int b = 0; b < m.params.n_blocks(); ++b) {
        std::uint64_t len = get_u64(is);
        std::string name(len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(len));
        auto rows = get_u64(is), cols = get_u64(is);
        get_u64(is);  // trainable flag (fixed by architecture)
        if (name != m.params.name(b) ||
            rows != static_cast<std::uint64_t>(m.params.rows(b)) ||
            cols != static_cast<std::uint64_t>(m.params.cols(b)))
            throw std::runtime_error("checkpoint block mismatch at " + name);
        auto& v = m.params.values(b);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!is) throw std::runtime_error("checkpoint truncated: " + path);
    return m;
}

}  // namespace ofnet
